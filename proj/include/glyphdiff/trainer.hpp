// Copyright (c) 2026 The glyphdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <deque>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "glyphdiff/checkpoint.hpp"
#include "glyphdiff/dataset.hpp"
#include "glyphdiff/diffusion.hpp"
#include "glyphdiff/optim.hpp"
#include "glyphdiff/unet.hpp"

namespace glyphdiff {

struct TrainConfig {
    int batch_size = 16;
    double learning_rate = 2e-4;  // desk scale; the reference regime uses 1e-5
    double weight_decay = 1e-6;
    int max_steps = 20000;
    int checkpoint_every = 2000;
    uint64_t seed = 0;
    double style_dropout = 0.1;   // teach the UNSPECIFIED style token
    double script_dropout = 0.05;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int loss_window = 100;

    void validate() const {
        if (batch_size < 1) throw UsageError("train: batch_size must be >= 1");
        if (!(learning_rate > 0)) throw UsageError("train: learning_rate must be > 0");
        if (max_steps < 1) throw UsageError("train: max_steps must be >= 1");
        if (checkpoint_every < 1) throw UsageError("train: checkpoint_every must be >= 1");
    }

    nlohmann::json to_json() const {
        return nlohmann::json{{"batch_size", batch_size},
                              {"learning_rate", learning_rate},
                              {"weight_decay", weight_decay},
                              {"max_steps", max_steps},
                              {"checkpoint_every", checkpoint_every},
                              {"seed", seed},
                              {"style_dropout", style_dropout},
                              {"script_dropout", script_dropout},
                              {"adam_beta1", adam_beta1},
                              {"adam_beta2", adam_beta2},
                              {"adam_eps", adam_eps},
                              {"loss_window", loss_window}};
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        c.batch_size = j.value("batch_size", c.batch_size);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.max_steps = j.value("max_steps", c.max_steps);
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
        c.seed = j.value("seed", c.seed);
        c.style_dropout = j.value("style_dropout", c.style_dropout);
        c.script_dropout = j.value("script_dropout", c.script_dropout);
        c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
        c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
        c.adam_eps = j.value("adam_eps", c.adam_eps);
        c.loss_window = j.value("loss_window", c.loss_window);
        return c;
    }
};

/// Everything a resumed run needs to continue bit-identically: step
/// counter, parameters, optimizer moments, the random stream, and the
/// trailing loss window.
struct TrainState {
    NoisePredictor32 model;
    AdamW<float> optimizer;
    Rng rng;
    int64_t step = 0;
    std::deque<double> loss_window;

    TrainState(NoisePredictor32 m, const TrainConfig& cfg)
        : model(std::move(m)),
          optimizer(AdamConfig{cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
                               cfg.weight_decay}),
          rng(cfg.seed) {}
};

/// One optimization step over a batch. Per sample, in batch order: draw t,
/// draw the noise field, then the style and script dropout coins -- a fixed
/// stream layout so runs replay exactly.
inline double train_step(TrainState& state, const std::vector<std::pair<GlyphImage, Condition>>& batch,
                         const NoiseSchedule& sched, const TrainConfig& config) {
    if (batch.empty()) throw UsageError("train_step: empty batch");
    const ModelConfig& mc = state.model.config();
    const int64_t B = static_cast<int64_t>(batch.size());
    const int64_t hw = static_cast<int64_t>(mc.image_size) * mc.image_size;

    Tensor32 x_t({B, 1, mc.image_size, mc.image_size});
    Tensor32 eps({B, 1, mc.image_size, mc.image_size});
    std::vector<int> ts(static_cast<size_t>(B));
    std::vector<ConditionIds> ids(static_cast<size_t>(B));

    for (int64_t b = 0; b < B; ++b) {
        const auto& [img, cond] = batch[static_cast<size_t>(b)];
        if (img.width != mc.image_size || img.height != mc.image_size)
            throw DataError("train_step: image size " + std::to_string(img.width) + " does not match model");
        const int t = sample_timestep(state.rng, sched.num_steps);
        ts[static_cast<size_t>(b)] = t;
        const float signal = static_cast<float>(std::sqrt(sched.alpha_bar(t)));
        const float noise = static_cast<float>(std::sqrt(1.0 - sched.alpha_bar(t)));
        for (int64_t i = 0; i < hw; ++i) {
            const float e = state.rng.gaussian_f();
            eps[b * hw + i] = e;
            x_t[b * hw + i] = signal * img.values[static_cast<size_t>(i)] + noise * e;
        }
        Condition dropped = cond;
        if (state.rng.uniform() < config.style_dropout) dropped.style = kUnspecified;
        if (state.rng.uniform() < config.script_dropout) dropped.script = kUnspecified;
        ids[static_cast<size_t>(b)] = condition_to_ids(dropped, state.model.vocab());
    }

    Tape<float> tape;
    auto ctx = state.model.embed_conditions(&tape, ids);
    auto out = state.model.forward(&tape, constant(std::move(x_t)), ts, ctx);
    auto loss = nn::mse_loss(&tape, out, std::move(eps));
    const double loss_value = static_cast<double>(loss->value[0]);
    if (!std::isfinite(loss_value)) {
        std::string t_list;
        for (int t : ts) t_list += std::to_string(t) + " ";
        Sha256 digest;
        for (const auto& [img, cond] : batch)
            digest.update(img.values.data(), img.values.size() * sizeof(float));
        throw NumericError("non-finite loss at step " + std::to_string(state.step) + "; t=[ " + t_list +
                           "]; batch=" + digest.finish_hex());
    }

    state.model.params().zero_grads();
    tape.backward(loss);
    state.optimizer.step(named_params<float>(state.model.params()));

    state.loss_window.push_back(loss_value);
    while (static_cast<int>(state.loss_window.size()) > config.loss_window) state.loss_window.pop_front();
    ++state.step;
    return loss_value;
}

namespace trainerdetail {

/// Sample index stream: concatenated per-epoch permutations, derived
/// statelessly from (seed, epoch).
inline size_t stream_index(uint64_t seed, size_t dataset_size, int64_t position,
                           std::vector<size_t>& perm_cache, int64_t& cached_epoch) {
    const int64_t epoch = position / static_cast<int64_t>(dataset_size);
    const int64_t offset = position % static_cast<int64_t>(dataset_size);
    if (epoch != cached_epoch) {
        perm_cache.resize(dataset_size);
        std::iota(perm_cache.begin(), perm_cache.end(), size_t{0});
        Rng rng(hash_mix(seed, hash_mix(0x45504f4348u, static_cast<uint64_t>(epoch))));
        rng.shuffle(perm_cache);
        cached_epoch = epoch;
    }
    return perm_cache[static_cast<size_t>(offset)];
}

inline void save_train_state(const std::string& dir, const TrainState& state) {
    const auto opt_dir = std::filesystem::path(dir) / "optimizer";
    std::filesystem::create_directories(opt_dir);
    nlohmann::json j{{"step", state.step},
                     {"rng", state.rng.state_json()},
                     {"adam_step", state.optimizer.step_count()},
                     {"loss_window", std::vector<double>(state.loss_window.begin(), state.loss_window.end())}};
    std::ofstream out(opt_dir / "state.json");
    if (!out) throw DataError("cannot write train state: " + dir);
    out << j.dump(2) << '\n';
    for (const auto& [name, mv] : state.optimizer.state()) {
        write_tensor_f32((opt_dir / ("m." + name)).string(), mv.first);
        write_tensor_f32((opt_dir / ("v." + name)).string(), mv.second);
    }
}

inline void load_train_state(const std::string& dir, TrainState& state) {
    const auto opt_dir = std::filesystem::path(dir) / "optimizer";
    std::ifstream in(opt_dir / "state.json");
    if (!in) throw DataError("checkpoint has no optimizer state to resume from: " + dir);
    nlohmann::json j;
    in >> j;
    state.step = j.at("step").get<int64_t>();
    state.rng = Rng::from_json(j.at("rng"));
    state.optimizer.set_step_count(j.at("adam_step").get<int64_t>());
    state.loss_window.clear();
    for (double v : j.at("loss_window").get<std::vector<double>>()) state.loss_window.push_back(v);
    for (const auto& [name, var] : state.model.params()) {
        auto& mv = state.optimizer.state()[name];
        mv.first = read_tensor_f32((opt_dir / ("m." + name)).string(), var->value.shape);
        mv.second = read_tensor_f32((opt_dir / ("v." + name)).string(), var->value.shape);
    }
}

}  // namespace trainerdetail

struct FitResult {
    std::string checkpoint_dir;
    int64_t steps = 0;
    double final_window_mean = 0.0;
};

/// Full training loop: shuffled epochs, periodic resumable checkpoints
/// under <out>/steps/, the final checkpoint at <out> itself, loss.csv
/// telemetry and a train.json run manifest.
inline FitResult fit(const DatasetManifest& manifest, const TrainConfig& config, const ScheduleSpec& sched_spec,
                     ModelConfig model_config, const std::string& out_dir,
                     const std::string& resume_from = "", const std::string& manifest_path_for_digest = "") {
    config.validate();
    if (manifest.empty()) throw DataError("fit: empty manifest");
    const NoiseSchedule sched = sched_spec.build();
    if (model_config.num_timesteps != sched.num_steps)
        model_config.num_timesteps = sched.num_steps;

    const auto dataset = load_dataset_images(manifest);
    const Vocabularies vocab = build_vocabulary(manifest);

    std::filesystem::create_directories(out_dir);

    TrainState state = [&] {
        if (!resume_from.empty()) {
            LoadedCheckpoint ck = load_checkpoint(resume_from);
            TrainState s(std::move(ck.model), config);
            trainerdetail::load_train_state(resume_from, s);
            return s;
        }
        return TrainState(NoisePredictor32(model_config, vocab, config.seed), config);
    }();

    // loss.csv: truncate anything past the resume point, then append.
    const auto loss_path = std::filesystem::path(out_dir) / "loss.csv";
    std::vector<std::string> kept_rows;
    if (state.step > 0 && std::filesystem::exists(loss_path)) {
        std::ifstream in(loss_path);
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            const auto comma = line.find(',');
            if (comma == std::string::npos) continue;
            if (std::stoll(line.substr(0, comma)) <= state.step) kept_rows.push_back(line);
        }
    }
    std::ofstream loss_csv(loss_path, std::ios::trunc);
    if (!loss_csv) throw DataError("cannot write loss.csv in " + out_dir);
    loss_csv << "step,loss\n";
    for (const auto& row : kept_rows) loss_csv << row << '\n';
    loss_csv.flush();

    {
        nlohmann::json run{{"command", "fit"},
                           {"config", config.to_json()},
                           {"model", state.model.config().to_json()},
                           {"schedule",
                            {{"num_steps", sched_spec.num_steps},
                             {"beta_start", sched_spec.beta_start},
                             {"beta_end", sched_spec.beta_end}}},
                           {"dataset_records", manifest.size()}};
        if (!manifest_path_for_digest.empty())
            run["manifest_digest"] = sha256_file(manifest_path_for_digest);
        std::ofstream run_out(std::filesystem::path(out_dir) / "train.json");
        run_out << run.dump(2) << '\n';
    }

    std::vector<size_t> perm_cache;
    int64_t cached_epoch = -1;
    std::vector<std::pair<GlyphImage, Condition>> batch;
    while (state.step < config.max_steps) {
        batch.clear();
        const int64_t base = state.step * config.batch_size;
        for (int j = 0; j < config.batch_size; ++j) {
            const size_t idx = trainerdetail::stream_index(config.seed, dataset.size(), base + j,
                                                           perm_cache, cached_epoch);
            batch.push_back(dataset[idx]);
        }
        const double loss = train_step(state, batch, sched, config);
        loss_csv << state.step << ',' << loss << '\n';
        if (state.step % 100 == 0) loss_csv.flush();
        if (state.step % config.checkpoint_every == 0 && state.step < config.max_steps) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "step-%08lld", static_cast<long long>(state.step));
            const std::string ck_dir = (std::filesystem::path(out_dir) / "steps" / buf).string();
            save_checkpoint(ck_dir, state.model, sched_spec);
            trainerdetail::save_train_state(ck_dir, state);
        }
    }
    loss_csv.flush();

    save_checkpoint(out_dir, state.model, sched_spec);
    trainerdetail::save_train_state(out_dir, state);

    FitResult result;
    result.checkpoint_dir = out_dir;
    result.steps = state.step;
    result.final_window_mean =
        state.loss_window.empty()
            ? 0.0
            : std::accumulate(state.loss_window.begin(), state.loss_window.end(), 0.0) /
                  static_cast<double>(state.loss_window.size());
    return result;
}

}  // namespace glyphdiff
