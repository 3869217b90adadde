// Copyright (c) 2026 The glyphdiff Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface over the glyph diffusion pipeline. Exit codes are a
// stable contract: 0 success, 2 usage error, 3 data error, 4 numeric
// failure. Every command that writes artifacts also writes a run.json
// recording config, seeds and input/output digests (timestamps excluded),
// so a rerun with identical inputs is byte-identical and checkable.

#include <climits>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "glyphdiff/glyphdiff.hpp"

namespace fs = std::filesystem;
using namespace glyphdiff;

namespace {

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read config file: " + path);
    try {
        nlohmann::json j;
        in >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad JSON in " + path + ": " + e.what());
    }
}

/// Collects input/output digests and writes the command's run manifest.
class RunRecorder {
public:
    RunRecorder(std::string command, uint64_t seed) : command_(std::move(command)), seed_(seed) {}

    void set_config(nlohmann::json cfg) { config_ = std::move(cfg); }
    void add_input(const std::string& path) { inputs_[path] = sha256_file(path); }
    void add_input_digest(const std::string& name, const std::string& digest) { inputs_[name] = digest; }
    void add_output(const std::string& path) { outputs_[path] = sha256_file(path); }

    void add_output_tree(const std::string& dir) {
        for (const auto& entry : fs::recursive_directory_iterator(dir)) {
            if (!entry.is_regular_file()) continue;
            const std::string rel = fs::relative(entry.path(), dir).string();
            if (rel == "run.json") continue;
            outputs_[rel] = sha256_file(entry.path().string());
        }
    }

    void write(const std::string& dir) {
        nlohmann::json j{{"command", command_}, {"version", kVersion},     {"seed", seed_},
                         {"config", config_},   {"input_digests", inputs_}, {"output_digests", outputs_}};
        std::ofstream out(fs::path(dir) / "run.json");
        if (!out) throw DataError("cannot write run manifest in " + dir);
        out << j.dump(2) << '\n';
    }

private:
    std::string command_;
    uint64_t seed_;
    nlohmann::json config_;
    std::map<std::string, std::string> inputs_;
    std::map<std::string, std::string> outputs_;
};

/// "character [script [style]]" with missing fields UNSPECIFIED.
Condition parse_prompt(const std::string& prompt) {
    std::istringstream ss(prompt);
    std::vector<std::string> fields;
    std::string f;
    while (ss >> f) fields.push_back(f);
    if (fields.empty()) throw UsageError("prompt is empty");
    if (fields.size() > 3)
        throw UsageError("prompt has " + std::to_string(fields.size()) +
                         " fields; expected 'character [script [style]]'");
    Condition cond;
    cond.character = fields[0];
    if (fields.size() > 1) cond.script = fields[1];
    if (fields.size() > 2) cond.style = fields[2];
    return cond;
}

void check_label(const Vocabulary& vocab, const std::string& label, const std::string& slot) {
    if (vocab.contains(label)) return;
    std::string msg = "unknown " + slot + " '" + label + "'";
    const auto near = vocab.nearest(label);
    if (!near.empty()) {
        msg += "; nearest matches:";
        for (const auto& n : near) msg += " '" + n + "'";
    }
    throw DataError(msg);
}

void check_condition(const Condition& cond, const Vocabularies& vocab, bool allow_novel_character) {
    if (!allow_novel_character) check_label(vocab.characters, cond.character, "character");
    check_label(vocab.scripts, cond.script, "script");
    check_label(vocab.styles, cond.style, "style");
}

// ---------------------------------------------------------------------------

int cmd_prepare_data(const std::string& spec_path, const std::string& out_dir, uint64_t seed,
                     int min_samples_override) {
    RunRecorder run("prepare-data", seed);
    run.add_input(spec_path);
    DatasetSpec spec = parse_dataset_spec(spec_path, seed);
    if (min_samples_override >= 0) spec.min_samples = min_samples_override;
    run.set_config(nlohmann::json{{"spec_file", spec_path},
                                  {"samples_per_pair", spec.samples_per_pair},
                                  {"min_samples", spec.min_samples},
                                  {"train_fraction", spec.train_fraction}});

    const DatasetManifest full = build_corpus(spec.specs, spec.samples_per_pair, out_dir);
    const DatasetManifest kept = threshold_filter(full, spec.min_samples);
    if (kept.size() != full.size()) {
        std::set<std::string> dropped;
        for (const auto& r : full.records) dropped.insert(r.character);
        for (const auto& r : kept.records) dropped.erase(r.character);
        std::cout << "threshold: dropped " << (full.size() - kept.size()) << " records; excluded characters:";
        for (const auto& c : dropped) std::cout << " '" << c << "'";
        std::cout << "\n";
    }
    write_manifest(kept, (fs::path(out_dir) / "manifest.jsonl").string());

    const SplitResult sp = split(kept, spec.train_fraction, seed);
    write_manifest(sp.train, (fs::path(out_dir) / "train_manifest.jsonl").string());
    write_manifest(sp.test, (fs::path(out_dir) / "test_manifest.jsonl").string());
    write_split_report(sp, seed, spec.train_fraction, (fs::path(out_dir) / "split.json").string());

    std::cout << "records: " << kept.size() << " (train " << sp.train.size() << ", test " << sp.test.size()
              << ")\n";
    for (const auto& [script, count] : kept.counts_by_script())
        std::cout << "script " << script << ": " << count << " records\n";
    const auto char_counts = kept.counts_by_character();
    std::cout << "characters: " << char_counts.size() << "\n";
    if (char_counts.size() <= 30) {
        for (const auto& [ch, count] : char_counts) std::cout << "  '" << ch << "': " << count << " records\n";
    } else {
        int lo = INT_MAX, hi = 0;
        for (const auto& [ch, count] : char_counts) {
            lo = std::min(lo, count);
            hi = std::max(hi, count);
        }
        std::cout << "  per-character records: min " << lo << ", max " << hi << "\n";
    }

    run.add_output_tree(out_dir);
    run.write(out_dir);
    return 0;
}

int cmd_train(const std::string& manifest_path, const std::string& out_dir,
              const std::string& model_config_path, const std::string& train_config_path,
              const nlohmann::json& overrides, bool resume) {
    TrainConfig tc = train_config_path.empty() ? TrainConfig{} : TrainConfig::from_json(read_json_file(train_config_path));
    ModelConfig mc = model_config_path.empty() ? ModelConfig{} : ModelConfig::from_json(read_json_file(model_config_path));
    ScheduleSpec sched;
    // Flags win over config files.
    if (overrides.contains("max_steps")) tc.max_steps = overrides["max_steps"].get<int>();
    if (overrides.contains("batch_size")) tc.batch_size = overrides["batch_size"].get<int>();
    if (overrides.contains("learning_rate")) tc.learning_rate = overrides["learning_rate"].get<double>();
    if (overrides.contains("seed")) tc.seed = overrides["seed"].get<uint64_t>();
    if (overrides.contains("checkpoint_every")) tc.checkpoint_every = overrides["checkpoint_every"].get<int>();
    if (overrides.contains("num_steps")) sched.num_steps = overrides["num_steps"].get<int>();
    if (overrides.contains("beta_start")) sched.beta_start = overrides["beta_start"].get<double>();
    if (overrides.contains("beta_end")) sched.beta_end = overrides["beta_end"].get<double>();

    RunRecorder run("train", tc.seed);
    run.add_input(manifest_path);
    run.set_config(nlohmann::json{{"train", tc.to_json()},
                                  {"model", mc.to_json()},
                                  {"schedule",
                                   {{"num_steps", sched.num_steps},
                                    {"beta_start", sched.beta_start},
                                    {"beta_end", sched.beta_end}}}});

    const DatasetManifest manifest = read_manifest(manifest_path);
    std::string resume_from;
    if (resume) {
        if (!fs::exists(fs::path(out_dir) / "optimizer" / "state.json"))
            throw DataError("--resume given but " + out_dir + " has no optimizer state");
        resume_from = out_dir;
    }
    const FitResult result = fit(manifest, tc, sched, mc, out_dir, resume_from, manifest_path);
    std::cout << "trained " << result.steps << " steps; final " << "loss window mean "
              << result.final_window_mean << "\n";
    std::cout << "checkpoint: " << result.checkpoint_dir << "\n";

    run.add_output_tree(out_dir);
    run.write(out_dir);
    return 0;
}

int cmd_train_classifier(const std::string& train_manifest_path, const std::string& test_manifest_path,
                         const std::string& out_dir, const std::string& config_path,
                         const nlohmann::json& overrides) {
    ClassifierConfig cc = config_path.empty() ? ClassifierConfig{} : ClassifierConfig::from_json(read_json_file(config_path));
    if (overrides.contains("epochs")) cc.epochs = overrides["epochs"].get<int>();
    if (overrides.contains("seed")) cc.seed = overrides["seed"].get<uint64_t>();

    RunRecorder run("train-classifier", cc.seed);
    run.add_input(train_manifest_path);
    run.set_config(cc.to_json());

    const DatasetManifest train_m = read_manifest(train_manifest_path);
    if (config_path.empty() && !train_m.empty()) {
        // No explicit config: size the classifier to the data.
        const GlyphImage probe = read_glyph_png(train_m.resolve(train_m.records[0].image_path));
        cc.image_size = probe.width;
    }
    DatasetManifest test_m;
    if (!test_manifest_path.empty()) {
        run.add_input(test_manifest_path);
        test_m = read_manifest(test_manifest_path);
    }
    auto [model, report] = train_classifier(train_m, test_m, cc);
    save_classifier(out_dir, model);
    {
        nlohmann::json rj{{"epoch_losses", report.epoch_losses},
                          {"holdout_script_accuracy", report.holdout_script_accuracy},
                          {"holdout_character_accuracy", report.holdout_character_accuracy}};
        std::ofstream out(fs::path(out_dir) / "train_report.json");
        out << rj.dump(2) << '\n';
    }
    std::cout << "classifier parameters: " << model.parameter_count() << "\n";
    if (!test_m.empty())
        std::cout << "holdout script accuracy " << report.holdout_script_accuracy << ", character accuracy "
                  << report.holdout_character_accuracy << "\n";

    run.add_output_tree(out_dir);
    run.write(out_dir);
    return 0;
}

int cmd_sample(const std::string& checkpoint_dir, const std::string& adapter_dir, std::string prompt,
               const std::string& character, const std::string& script, const std::string& style,
               const std::string& text, uint64_t seed, const std::string& out_path, int columns) {
    LoadedCheckpoint ck = load_checkpoint(checkpoint_dir);
    const NoiseSchedule sched = ck.schedule.build();
    const std::string model_digest = checkpoint_digest(checkpoint_dir);

    std::optional<AdaptedModel<float>> adapted;
    if (!adapter_dir.empty()) adapted = load_adapter(adapter_dir, ck.model);
    const Vocabularies& vocab = adapted ? adapted->vocab() : ck.model.vocab();

    Condition cond;
    if (!prompt.empty()) cond = parse_prompt(prompt);
    if (!character.empty()) cond.character = character;
    if (!script.empty()) cond.script = script;
    if (!style.empty()) cond.style = style;

    if (text.empty() && cond.character.empty())
        throw UsageError("nothing to sample: give --prompt, --character or --text");

    fs::path out(out_path);
    if (out.parent_path().empty()) out = fs::path(".") / out;
    fs::create_directories(out.parent_path());

    std::vector<Condition> conds;
    std::vector<uint64_t> seeds;
    GlyphImage image;
    if (!text.empty()) {
        check_label(vocab.scripts, cond.script, "script");
        check_label(vocab.styles, cond.style, "style");
        const auto cps = utf8_codepoints(text);
        for (size_t i = 0; i < cps.size(); ++i) {
            Condition c = cond;
            c.character = utf8_encode(cps[i]);
            check_label(vocab.characters, c.character, "character");
            conds.push_back(c);
            seeds.push_back(seed + i);
        }
        if (adapted)
            image = generate_string(*adapted, text, cond.script, cond.style, sched, seed, columns);
        else
            image = generate_string(ck.model, text, cond.script, cond.style, sched, seed, columns);
    } else {
        check_condition(cond, vocab, false);
        conds.push_back(cond);
        seeds.push_back(seed);
        image = adapted ? generate(*adapted, cond, sched, seed) : generate(ck.model, cond, sched, seed);
    }
    write_glyph_png(out.string(), image);
    {
        nlohmann::json sidecar = sample_sidecar(conds, seeds, model_digest);
        if (!adapter_dir.empty()) sidecar["adapter"] = adapter_dir;
        std::ofstream sc(out.string() + ".json");
        sc << sidecar.dump(2) << '\n';
    }
    std::cout << "wrote " << out.string() << "\n";
    return 0;
}

int cmd_finetune(const std::string& checkpoint_dir, const std::string& image_path, const std::string& prompt,
                 int rank, int steps, double learning_rate, const std::string& targets_glob,
                 const std::string& out_dir, uint64_t seed) {
    RunRecorder run("finetune", seed);
    run.add_input(image_path);
    run.add_input_digest("checkpoint", checkpoint_digest(checkpoint_dir));
    run.set_config(nlohmann::json{{"rank", rank},
                                  {"steps", steps},
                                  {"learning_rate", learning_rate},
                                  {"targets", targets_glob},
                                  {"prompt", prompt}});

    LoadedCheckpoint ck = load_checkpoint(checkpoint_dir);
    const NoiseSchedule sched = ck.schedule.build();
    const GlyphImage image = read_glyph_png(image_path);
    if (image.width != ck.config.image_size || image.height != ck.config.image_size)
        throw DataError("fine-tune image is " + std::to_string(image.width) + "x" +
                        std::to_string(image.height) + ", model expects " +
                        std::to_string(ck.config.image_size));

    Condition cond = parse_prompt(prompt);
    check_condition(cond, ck.vocab, /*allow_novel_character=*/true);

    const std::vector<std::string> targets = targets_glob.empty()
                                                 ? default_lora_targets(ck.model)
                                                 : lora_targets_matching(ck.model, targets_glob);
    if (targets.empty()) throw DataError("no parameters match the adapter target pattern");

    const std::string base_digest_before = params_digest(ck.model.params());
    AdaptedModel<float> adapted = inject(ck.model, targets, rank, /*alpha=*/-1.0, seed);
    Rng rng(seed);
    const auto losses = fine_tune_one_shot(adapted, image, cond, steps, learning_rate, sched, rng);
    if (params_digest(ck.model.params()) != base_digest_before)
        throw NumericError("base parameters changed during fine-tuning");

    save_adapter(out_dir, adapted);
    {
        const size_t k = std::min<size_t>(10, losses.size());
        double first = 0, last = 0;
        for (size_t i = 0; i < k; ++i) first += losses[i];
        for (size_t i = losses.size() - k; i < losses.size(); ++i) last += losses[i];
        nlohmann::json rj{{"steps", steps},
                          {"first_window_mean", first / k},
                          {"last_window_mean", last / k},
                          {"appended_characters", adapted.appended_characters()}};
        std::ofstream out(fs::path(out_dir) / "finetune_report.json");
        out << rj.dump(2) << '\n';
        std::cout << "loss first-10 mean " << first / k << " -> last-10 mean " << last / k << "\n";
    }
    run.add_output_tree(out_dir);
    run.write(out_dir);
    return 0;
}

int cmd_eval(const std::string& checkpoint_dir, const std::string& classifier_dir,
             const std::string& protocol_path, const std::string& out_dir, const nlohmann::json& overrides) {
    nlohmann::json pj = protocol_path.empty() ? nlohmann::json::object() : read_json_file(protocol_path);
    EvalProtocol protocol = EvalProtocol::from_json(pj);
    if (overrides.contains("num_characters")) protocol.num_characters = overrides["num_characters"].get<int>();
    if (overrides.contains("seed")) protocol.seed = overrides["seed"].get<uint64_t>();
    std::string train_manifest_path = pj.value("train_manifest", "");
    std::string test_manifest_path = pj.value("test_manifest", "");
    if (overrides.contains("train_manifest")) train_manifest_path = overrides["train_manifest"].get<std::string>();
    if (overrides.contains("test_manifest")) test_manifest_path = overrides["test_manifest"].get<std::string>();
    if (train_manifest_path.empty())
        throw UsageError("eval needs a train manifest (protocol file key 'train_manifest' or --train-manifest)");

    RunRecorder run("eval", protocol.seed);
    run.add_input(train_manifest_path);
    run.add_input_digest("checkpoint", checkpoint_digest(checkpoint_dir));
    run.set_config(nlohmann::json{{"num_characters", protocol.num_characters}, {"seed", protocol.seed}});

    LoadedCheckpoint ck = load_checkpoint(checkpoint_dir);
    const NoiseSchedule sched = ck.schedule.build();
    MultitaskClassifier32 classifier = load_classifier(classifier_dir);
    const DatasetManifest train_m = read_manifest(train_manifest_path);

    // Vocabulary compatibility up front: every protocol label must be known
    // to both the generator and the classifier.
    const auto [no_style, with_style] = protocol_conditions(train_m, protocol.num_characters);
    for (const auto& c : no_style) {
        check_condition(c, ck.vocab, false);
        check_label(classifier.scripts(), c.script, "script");
        check_label(classifier.characters(), c.character, "character");
    }
    for (const auto& c : with_style) check_condition(c, ck.vocab, false);

    std::vector<AccuracyReport> reports;
    if (!test_manifest_path.empty()) {
        run.add_input(test_manifest_path);
        const DatasetManifest test_m = read_manifest(test_manifest_path);
        if (!test_m.empty()) {
            ScoredCorpus real;
            for (auto& [img, cond] : load_dataset_images(test_m)) real.emplace_back(std::move(img), cond);
            reports.push_back(score_corpus(classifier, real, "real"));
        }
    }
    std::cout << "generating " << no_style.size() << " style-free samples...\n";
    const ScoredCorpus gen_plain =
        generate_protocol_corpus(ck.model, sched, no_style, protocol.seed, protocol.sample_batch);
    reports.push_back(score_corpus(classifier, gen_plain, "generated-no-style"));
    std::cout << "generating " << with_style.size() << " styled samples...\n";
    const ScoredCorpus gen_styled = generate_protocol_corpus(ck.model, sched, with_style,
                                                             protocol.seed + no_style.size(),
                                                             protocol.sample_batch);
    reports.push_back(score_corpus(classifier, gen_styled, "generated-with-style"));

    write_reports(reports, out_dir);
    save_failure_census(out_dir, "failures-no-style", failure_census(classifier, gen_plain), gen_plain);
    save_failure_census(out_dir, "failures-with-style", failure_census(classifier, gen_styled), gen_styled);

    for (const auto& r : reports) {
        const AccuracyRow t = r.total();
        std::cout << r.corpus << ": script " << t.script_accuracy() << ", character "
                  << t.character_accuracy() << " (n=" << t.n << ")\n";
    }
    run.add_output_tree(out_dir);
    run.write(out_dir);
    return 0;
}

int cmd_inspect_schedule(int num_steps, double beta_start, double beta_end, const std::string& out_path) {
    const NoiseSchedule sched = build_linear_schedule(num_steps, beta_start, beta_end);
    if (out_path.empty()) {
        write_schedule_csv(sched, std::cout);
    } else {
        std::ofstream out(out_path);
        if (!out) throw DataError("cannot write " + out_path);
        write_schedule_csv(sched, out);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"glyph diffusion: conditional glyph generation, one-shot style transfer, evaluation"};
    app.set_version_flag("--version", std::string("glyphdiff ") + kVersion);
    app.require_subcommand(1);

    // prepare-data
    auto* prep = app.add_subcommand("prepare-data", "render the font corpus, apply the sample threshold, split");
    std::string prep_spec, prep_out;
    uint64_t prep_seed = 0;
    int prep_min_samples = -1;
    prep->add_option("--spec", prep_spec, "dataset spec JSON")->required();
    prep->add_option("--out", prep_out, "output directory")->required();
    prep->add_option("--seed", prep_seed, "corpus seed");
    prep->add_option("--min-samples", prep_min_samples, "threshold: keep characters with more than N records");

    // train
    auto* train = app.add_subcommand("train", "train the conditional noise predictor");
    std::string train_manifest, train_out, train_model_cfg, train_train_cfg;
    bool train_resume = false;
    nlohmann::json train_overrides = nlohmann::json::object();
    train->add_option("--manifest", train_manifest, "training manifest (JSONL)")->required();
    train->add_option("--out", train_out, "checkpoint output directory")->required();
    train->add_option("--model-config", train_model_cfg, "model config JSON");
    train->add_option("--train-config", train_train_cfg, "train config JSON");
    train->add_flag("--resume", train_resume, "resume from the optimizer state in --out");
    train->add_option_function<int>("--max-steps", [&](int v) { train_overrides["max_steps"] = v; });
    train->add_option_function<int>("--batch-size", [&](int v) { train_overrides["batch_size"] = v; });
    train->add_option_function<double>("--learning-rate", [&](double v) { train_overrides["learning_rate"] = v; });
    train->add_option_function<uint64_t>("--seed", [&](uint64_t v) { train_overrides["seed"] = v; });
    train->add_option_function<int>("--checkpoint-every", [&](int v) { train_overrides["checkpoint_every"] = v; });
    train->add_option_function<int>("--steps", [&](int v) { train_overrides["num_steps"] = v; });
    train->add_option_function<double>("--beta-start", [&](double v) { train_overrides["beta_start"] = v; });
    train->add_option_function<double>("--beta-end", [&](double v) { train_overrides["beta_end"] = v; });

    // train-classifier
    auto* trainc = app.add_subcommand("train-classifier", "train the multitask evaluation classifier");
    std::string trainc_train, trainc_test, trainc_out, trainc_cfg;
    nlohmann::json trainc_overrides = nlohmann::json::object();
    trainc->add_option("--train-manifest", trainc_train, "training manifest")->required();
    trainc->add_option("--test-manifest", trainc_test, "held-out manifest for the accuracy report");
    trainc->add_option("--out", trainc_out, "classifier checkpoint directory")->required();
    trainc->add_option("--config", trainc_cfg, "classifier config JSON");
    trainc->add_option_function<int>("--epochs", [&](int v) { trainc_overrides["epochs"] = v; });
    trainc->add_option_function<uint64_t>("--seed", [&](uint64_t v) { trainc_overrides["seed"] = v; });

    // sample
    auto* sample = app.add_subcommand("sample", "generate glyphs from a checkpoint");
    std::string s_ckpt, s_adapter, s_prompt, s_char, s_script, s_style, s_text, s_out = "sample.png";
    uint64_t s_seed = 0;
    int s_columns = 0;
    sample->add_option("--checkpoint", s_ckpt, "model checkpoint directory")->required();
    sample->add_option("--adapter", s_adapter, "optional adapter checkpoint directory");
    sample->add_option("--prompt", s_prompt, "'character [script [style]]'");
    sample->add_option("--character", s_char, "character label");
    sample->add_option("--script", s_script, "script label");
    sample->add_option("--style", s_style, "style label");
    sample->add_option("--text", s_text, "render a whole string, one cell per character");
    sample->add_option("--seed", s_seed, "generation seed");
    sample->add_option("--out", s_out, "output PNG path");
    sample->add_option("--columns", s_columns, "grid columns for --text");

    // finetune
    auto* finetune = app.add_subcommand("finetune", "one-shot low-rank fine-tuning on a single image");
    std::string f_ckpt, f_image, f_prompt, f_targets, f_out;
    int f_rank = 4, f_steps = 500;
    double f_lr = 1e-3;
    uint64_t f_seed = 0;
    finetune->add_option("--checkpoint", f_ckpt, "base checkpoint directory")->required();
    finetune->add_option("--image", f_image, "PNG of the new character/symbol")->required();
    finetune->add_option("--prompt", f_prompt, "'character [script [style]]'")->required();
    finetune->add_option("--rank", f_rank, "adapter rank");
    finetune->add_option("--steps", f_steps, "fine-tuning steps");
    finetune->add_option("--learning-rate", f_lr, "fine-tuning learning rate");
    finetune->add_option("--targets", f_targets, "adapter target glob (default: all cross-attention projections)");
    finetune->add_option("--out", f_out, "adapter output directory")->required();
    finetune->add_option("--seed", f_seed, "fine-tuning seed");

    // eval
    auto* eval = app.add_subcommand("eval", "generate the protocol corpus and score it");
    std::string e_ckpt, e_classifier, e_protocol, e_out;
    nlohmann::json e_overrides = nlohmann::json::object();
    eval->add_option("--checkpoint", e_ckpt, "model checkpoint directory")->required();
    eval->add_option("--classifier", e_classifier, "classifier checkpoint directory")->required();
    eval->add_option("--protocol", e_protocol, "protocol config JSON");
    eval->add_option("--out", e_out, "report output directory")->required();
    eval->add_option_function<int>("--num-characters", [&](int v) { e_overrides["num_characters"] = v; });
    eval->add_option_function<uint64_t>("--seed", [&](uint64_t v) { e_overrides["seed"] = v; });
    eval->add_option_function<std::string>("--train-manifest",
                                           [&](std::string v) { e_overrides["train_manifest"] = v; });
    eval->add_option_function<std::string>("--test-manifest",
                                           [&](std::string v) { e_overrides["test_manifest"] = v; });

    // inspect-schedule
    auto* inspect = app.add_subcommand("inspect-schedule", "print t, beta, alpha_bar, SNR as CSV");
    int i_steps = kDefaultNumSteps;
    double i_beta_start = kDefaultBetaStart, i_beta_end = kDefaultBetaEnd;
    std::string i_out;
    inspect->add_option("--steps", i_steps, "number of diffusion steps");
    inspect->add_option("--beta-start", i_beta_start, "beta at t=1");
    inspect->add_option("--beta-end", i_beta_end, "beta at t=T");
    inspect->add_option("--out", i_out, "write CSV here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (prep->parsed()) return cmd_prepare_data(prep_spec, prep_out, prep_seed, prep_min_samples);
        if (train->parsed())
            return cmd_train(train_manifest, train_out, train_model_cfg, train_train_cfg, train_overrides,
                             train_resume);
        if (trainc->parsed())
            return cmd_train_classifier(trainc_train, trainc_test, trainc_out, trainc_cfg, trainc_overrides);
        if (sample->parsed())
            return cmd_sample(s_ckpt, s_adapter, s_prompt, s_char, s_script, s_style, s_text, s_seed, s_out,
                              s_columns);
        if (finetune->parsed())
            return cmd_finetune(f_ckpt, f_image, f_prompt, f_rank, f_steps, f_lr, f_targets, f_out, f_seed);
        if (eval->parsed()) return cmd_eval(e_ckpt, e_classifier, e_protocol, e_out, e_overrides);
        if (inspect->parsed()) return cmd_inspect_schedule(i_steps, i_beta_start, i_beta_end, i_out);
        throw UsageError("no subcommand given");
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
