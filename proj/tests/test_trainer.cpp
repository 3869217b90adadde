// Copyright (c) 2026 The glyphdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <filesystem>
#include <fstream>

#include "glyphdiff/trainer.hpp"

using namespace glyphdiff;

namespace {

const char* kSans = "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf";
const char* kSerif = "/usr/share/fonts/truetype/dejavu/DejaVuSerif.ttf";

ModelConfig tiny_model_config() {
    ModelConfig cfg;
    cfg.image_size = 8;
    cfg.block_channels = {8, 16};
    cfg.embed_dim = 8;
    cfg.heads = 2;
    cfg.num_timesteps = 10;
    cfg.time_sin_dim = 8;
    cfg.time_dim = 16;
    cfg.attention_levels = {1};
    return cfg;
}

TrainConfig tiny_train_config() {
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.max_steps = 4;
    cfg.checkpoint_every = 2;
    cfg.loss_window = 8;
    return cfg;
}

/// Small rendered corpus shared by the trainer tests; built once.
const DatasetManifest& tiny_corpus() {
    static const DatasetManifest manifest = [] {
        const std::string dir = "test_trainer_corpus_tmp";
        std::filesystem::remove_all(dir);
        std::vector<RenderSpec> specs;
        for (const auto& [font, script] : {std::pair{kSans, "sans"}, std::pair{kSerif, "serif"}}) {
            RenderSpec spec;
            spec.font_source = font;
            spec.charset = {"A", "B", "C"};
            spec.image_size = 8;
            spec.script_label = script;
            spec.style_label = "book";
            specs.push_back(spec);
        }
        return build_corpus(specs, 2, dir);
    }();
    return manifest;
}

std::vector<std::pair<GlyphImage, Condition>> first_batch(size_t n) {
    auto data = load_dataset_images(tiny_corpus());
    data.resize(n);
    return data;
}

}  // namespace

TEST(Adam, MatchesHandSteppedReferenceOnQuadratic) {
    // Single scalar parameter, loss (x - 3)^2, five steps compared to a
    // from-scratch reference at 1e-12.
    AdamConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.weight_decay = 0.01;
    AdamW<double> opt(cfg);
    auto x = make_param(Tensor<double>::full({1}, 10.0));

    double ref_x = 10.0, m = 0.0, v = 0.0;
    for (int step = 1; step <= 5; ++step) {
        Tape<double> tape;
        auto loss = nn::mse_loss(&tape, x, Tensor<double>::full({1}, 3.0));
        x->zero_grad();
        tape.backward(loss);
        opt.step({{"x", x}});

        const double g = 2.0 * (ref_x - 3.0);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double m_hat = m / (1.0 - std::pow(0.9, step));
        const double v_hat = v / (1.0 - std::pow(0.999, step));
        ref_x -= 0.1 * (m_hat / (std::sqrt(v_hat) + 1e-8) + 0.01 * ref_x);
        ASSERT_NEAR(x->value[0], ref_x, 1e-12) << "step " << step;
    }
}

TEST(TrainStep, ZeroLearningRateLeavesParametersReportsLoss) {
    TrainConfig cfg = tiny_train_config();
    cfg.learning_rate = 0.0;  // probe value, below fit()'s validation gate
    TrainState state(NoisePredictor32(tiny_model_config(), build_vocabulary(tiny_corpus()), 1), cfg);
    const NoiseSchedule sched = build_linear_schedule(10, 1e-3, 0.05);
    const std::string before = params_digest(state.model.params());
    const double loss = train_step(state, first_batch(4), sched, cfg);
    EXPECT_GT(loss, 0.0);
    EXPECT_EQ(params_digest(state.model.params()), before);
    EXPECT_EQ(state.step, 1);
}

TEST(TrainStep, SeededDeterminismAcrossRuns) {
    const NoiseSchedule sched = build_linear_schedule(10, 1e-3, 0.05);
    const auto vocab = build_vocabulary(tiny_corpus());
    std::vector<double> losses1, losses2;
    for (auto* out : {&losses1, &losses2}) {
        TrainConfig cfg = tiny_train_config();
        cfg.seed = 77;
        TrainState state(NoisePredictor32(tiny_model_config(), vocab, cfg.seed), cfg);
        for (int i = 0; i < 5; ++i) out->push_back(train_step(state, first_batch(4), sched, cfg));
    }
    EXPECT_EQ(losses1, losses2);
}

#ifdef _OPENMP
TEST(TrainStep, BitIdenticalAcrossThreadCounts) {
    const NoiseSchedule sched = build_linear_schedule(10, 1e-3, 0.05);
    const auto vocab = build_vocabulary(tiny_corpus());
    std::vector<std::string> digests;
    std::vector<double> losses;
    for (int threads : {1, 2}) {
        omp_set_num_threads(threads);
        TrainConfig cfg = tiny_train_config();
        TrainState state(NoisePredictor32(tiny_model_config(), vocab, 5), cfg);
        double loss = 0;
        for (int i = 0; i < 3; ++i) loss = train_step(state, first_batch(6), sched, cfg);
        digests.push_back(params_digest(state.model.params()));
        losses.push_back(loss);
    }
    omp_set_num_threads(0);
    EXPECT_EQ(digests[0], digests[1]);
    EXPECT_EQ(losses[0], losses[1]);
}
#endif

TEST(TrainStep, NonFiniteLossDiagnostics) {
    TrainConfig cfg = tiny_train_config();
    TrainState state(NoisePredictor32(tiny_model_config(), build_vocabulary(tiny_corpus()), 1), cfg);
    state.model.params().at("unet.conv_out.bias")->value[0] = std::numeric_limits<float>::quiet_NaN();
    const NoiseSchedule sched = build_linear_schedule(10, 1e-3, 0.05);
    try {
        train_step(state, first_batch(2), sched, cfg);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("t=["), std::string::npos);
        EXPECT_NE(msg.find("batch="), std::string::npos);
    }
    EXPECT_THROW(train_step(state, {}, sched, cfg), UsageError);
}

TEST(Fit, SingleStepProducesTelemetryAndLoadableCheckpoint) {
    const std::string out = "test_trainer_fit1_tmp";
    std::filesystem::remove_all(out);
    TrainConfig cfg = tiny_train_config();
    cfg.max_steps = 1;
    ScheduleSpec sched;
    sched.num_steps = 10;
    const FitResult result = fit(tiny_corpus(), cfg, sched, tiny_model_config(), out);
    EXPECT_EQ(result.steps, 1);

    std::ifstream csv(std::filesystem::path(out) / "loss.csv");
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "step,loss");
    int rows = 0;
    while (std::getline(csv, line))
        if (!line.empty()) ++rows;
    EXPECT_EQ(rows, 1);

    EXPECT_TRUE(std::filesystem::exists(std::filesystem::path(out) / "train.json"));
    const LoadedCheckpoint ck = load_checkpoint(out);
    EXPECT_EQ(ck.schedule.num_steps, 10);
}

TEST(Fit, LossTelemetryMonotoneInStep) {
    const std::string out = "test_trainer_fit2_tmp";
    std::filesystem::remove_all(out);
    TrainConfig cfg = tiny_train_config();
    cfg.max_steps = 6;
    ScheduleSpec sched;
    sched.num_steps = 10;
    fit(tiny_corpus(), cfg, sched, tiny_model_config(), out);
    std::ifstream csv(std::filesystem::path(out) / "loss.csv");
    std::string line;
    std::getline(csv, line);
    int64_t prev = 0;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        const int64_t step = std::stoll(line.substr(0, line.find(',')));
        EXPECT_GT(step, prev);
        prev = step;
    }
    EXPECT_EQ(prev, 6);  // completed steps 1..6
}

TEST(Fit, ResumeReproducesUninterruptedTrajectory) {
    const std::string full_dir = "test_trainer_full_tmp";
    const std::string part_dir = "test_trainer_part_tmp";
    std::filesystem::remove_all(full_dir);
    std::filesystem::remove_all(part_dir);
    ScheduleSpec sched;
    sched.num_steps = 10;

    TrainConfig cfg = tiny_train_config();
    cfg.max_steps = 6;
    cfg.seed = 3;
    fit(tiny_corpus(), cfg, sched, tiny_model_config(), full_dir);

    TrainConfig cfg_half = cfg;
    cfg_half.max_steps = 3;
    fit(tiny_corpus(), cfg_half, sched, tiny_model_config(), part_dir);
    // Continue the interrupted run to the same horizon.
    fit(tiny_corpus(), cfg, sched, tiny_model_config(), part_dir, /*resume_from=*/part_dir);

    const LoadedCheckpoint a = load_checkpoint(full_dir);
    const LoadedCheckpoint b = load_checkpoint(part_dir);
    EXPECT_EQ(params_digest(a.model.params()), params_digest(b.model.params()));

    // loss.csv identical too (telemetry is part of the trajectory).
    EXPECT_EQ(sha256_file(full_dir + "/loss.csv"), sha256_file(part_dir + "/loss.csv"));
}

TEST(Fit, OverfitSmokeLossDecreases) {
    const std::string out = "test_trainer_overfit_tmp";
    std::filesystem::remove_all(out);
    DatasetManifest one;
    one.base_dir = tiny_corpus().base_dir;
    one.records = {tiny_corpus().records[0]};
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.max_steps = 300;
    cfg.checkpoint_every = 1000;
    cfg.learning_rate = 2e-3;
    cfg.loss_window = 50;
    ScheduleSpec sched;
    sched.num_steps = 10;
    fit(one, cfg, sched, tiny_model_config(), out);

    std::ifstream csv(std::filesystem::path(out) / "loss.csv");
    std::string line;
    std::getline(csv, line);
    std::vector<double> losses;
    while (std::getline(csv, line))
        if (!line.empty()) losses.push_back(std::stod(line.substr(line.find(',') + 1)));
    ASSERT_EQ(losses.size(), 300u);
    double first = 0, last = 0;
    for (int i = 0; i < 50; ++i) {
        first += losses[static_cast<size_t>(i)];
        last += losses[losses.size() - 50 + static_cast<size_t>(i)];
    }
    EXPECT_LT(last, 0.7 * first);  // single tiny image overfits quickly
}

TEST(Fit, RejectsBadConfigs) {
    ScheduleSpec sched;
    TrainConfig cfg = tiny_train_config();
    cfg.max_steps = 0;
    EXPECT_THROW(fit(tiny_corpus(), cfg, sched, tiny_model_config(), "x_tmp"), UsageError);
    TrainConfig cfg2 = tiny_train_config();
    DatasetManifest empty;
    EXPECT_THROW(fit(empty, cfg2, sched, tiny_model_config(), "x_tmp"), DataError);
}
