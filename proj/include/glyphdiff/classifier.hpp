// Copyright (c) 2026 The glyphdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "glyphdiff/checkpoint.hpp"
#include "glyphdiff/dataset.hpp"
#include "glyphdiff/nn.hpp"
#include "glyphdiff/optim.hpp"

namespace glyphdiff {

struct ClassifierConfig {
    int image_size = 32;
    std::vector<int> stage_channels = {16, 32, 64};
    int blocks_per_stage = 1;
    int norm_groups = 8;
    int epochs = 15;
    int batch_size = 32;
    double learning_rate = 1e-3;
    double weight_decay = 1e-4;
    uint64_t seed = 0;

    nlohmann::json to_json() const {
        return nlohmann::json{{"image_size", image_size},       {"stage_channels", stage_channels},
                              {"blocks_per_stage", blocks_per_stage}, {"norm_groups", norm_groups},
                              {"epochs", epochs},               {"batch_size", batch_size},
                              {"learning_rate", learning_rate}, {"weight_decay", weight_decay},
                              {"seed", seed}};
    }

    static ClassifierConfig from_json(const nlohmann::json& j) {
        ClassifierConfig c;
        c.image_size = j.value("image_size", c.image_size);
        c.stage_channels = j.value("stage_channels", c.stage_channels);
        c.blocks_per_stage = j.value("blocks_per_stage", c.blocks_per_stage);
        c.norm_groups = j.value("norm_groups", c.norm_groups);
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.seed = j.value("seed", c.seed);
        return c;
    }
};

/// Small residual CNN with a shared backbone and two linear heads, one
/// over scripts and one over characters.
template <typename T>
class MultitaskClassifier {
public:
    MultitaskClassifier(ClassifierConfig cfg, Vocabulary scripts, Vocabulary characters, uint64_t seed)
        : cfg_(std::move(cfg)), scripts_(std::move(scripts)), characters_(std::move(characters)) {
        if (scripts_.size() < 2 || characters_.size() < 2)
            throw DataError("classifier needs at least 2 scripts and 2 characters");
        build_params(seed);
    }

    MultitaskClassifier(ClassifierConfig cfg, Vocabulary scripts, Vocabulary characters,
                        std::map<std::string, Tensor<T>> tensors)
        : cfg_(std::move(cfg)), scripts_(std::move(scripts)), characters_(std::move(characters)) {
        MultitaskClassifier ref(cfg_, scripts_, characters_, 0);
        for (const auto& name : ref.params_.names()) {
            auto it = tensors.find(name);
            if (it == tensors.end()) throw DataError("classifier checkpoint missing parameter: " + name);
            params_.add(name, std::move(it->second));
        }
    }

    MultitaskClassifier(const MultitaskClassifier&) = delete;
    MultitaskClassifier& operator=(const MultitaskClassifier&) = delete;
    MultitaskClassifier(MultitaskClassifier&&) noexcept = default;
    MultitaskClassifier& operator=(MultitaskClassifier&&) noexcept = default;

    const ClassifierConfig& config() const { return cfg_; }
    const Vocabulary& scripts() const { return scripts_; }
    const Vocabulary& characters() const { return characters_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    int64_t parameter_count() const { return params_.parameter_count(); }

    /// Logits for both heads over a [B,1,H,W] batch.
    std::pair<Var<T>, Var<T>> forward(Tape<T>* tape, const Var<T>& x) const {
        if (x->value.rank() != 4 || x->value.dim(2) != cfg_.image_size || x->value.dim(3) != cfg_.image_size)
            throw UsageError("classifier forward: bad input shape " + shape_str(x->value.shape));
        auto h = nn::conv2d(tape, x, params_.at("stem.weight"), params_.at("stem.bias"), 1, 1);
        for (size_t s = 0; s < cfg_.stage_channels.size(); ++s) {
            const std::string sp = "stage" + std::to_string(s);
            if (s > 0)
                h = nn::conv2d(tape, h, params_.at(sp + ".down.weight"), params_.at(sp + ".down.bias"), 2, 1);
            for (int b = 0; b < cfg_.blocks_per_stage; ++b)
                h = res_block(tape, sp + ".res" + std::to_string(b), h);
        }
        const int last = cfg_.stage_channels.back();
        h = nn::group_norm(tape, h, params_.at("head.norm.gamma"), params_.at("head.norm.beta"),
                           norm_groups_for(last, cfg_.norm_groups));
        h = nn::silu(tape, h);
        auto features = nn::global_avg_pool(tape, h);
        auto script_logits = nn::linear(tape, features, params_.at("head.script.weight"),
                                        params_.at("head.script.bias"));
        auto char_logits = nn::linear(tape, features, params_.at("head.character.weight"),
                                      params_.at("head.character.bias"));
        return {script_logits, char_logits};
    }

    struct Prediction {
        int script_id = 0;
        int character_id = 0;
        std::vector<float> script_probs;
        std::vector<float> char_logits;
    };

    /// Inference over a batch of images, chunked internally.
    std::vector<Prediction> predict(const std::vector<GlyphImage>& images, int chunk = 64) const {
        std::vector<Prediction> out(images.size());
        const int64_t hw = static_cast<int64_t>(cfg_.image_size) * cfg_.image_size;
        for (size_t base = 0; base < images.size(); base += static_cast<size_t>(chunk)) {
            const size_t n = std::min(static_cast<size_t>(chunk), images.size() - base);
            Tensor<T> x({static_cast<int64_t>(n), 1, cfg_.image_size, cfg_.image_size});
            for (size_t i = 0; i < n; ++i) {
                const auto& img = images[base + i];
                if (img.width != cfg_.image_size || img.height != cfg_.image_size)
                    throw DataError("classifier: image size mismatch");
                for (int64_t k = 0; k < hw; ++k) x[static_cast<int64_t>(i) * hw + k] = static_cast<T>(img.values[static_cast<size_t>(k)]);
            }
            auto [script_logits, char_logits] = forward(nullptr, constant(std::move(x)));
            const int64_t S = script_logits->value.dim(1), C = char_logits->value.dim(1);
            for (size_t i = 0; i < n; ++i) {
                Prediction& p = out[base + i];
                const T* srow = script_logits->value.ptr() + static_cast<int64_t>(i) * S;
                const T* crow = char_logits->value.ptr() + static_cast<int64_t>(i) * C;
                p.script_probs.resize(static_cast<size_t>(S));
                for (int64_t k = 0; k < S; ++k) p.script_probs[static_cast<size_t>(k)] = static_cast<float>(srow[k]);
                nn::softmax_rows(p.script_probs.data(), 1, S);
                p.char_logits.resize(static_cast<size_t>(C));
                for (int64_t k = 0; k < C; ++k) p.char_logits[static_cast<size_t>(k)] = static_cast<float>(crow[k]);
                p.script_id = static_cast<int>(std::max_element(srow, srow + S) - srow);
                p.character_id = static_cast<int>(std::max_element(crow, crow + C) - crow);
            }
        }
        return out;
    }

private:
    Var<T> res_block(Tape<T>* tape, const std::string& p, const Var<T>& x) const {
        const int c = static_cast<int>(x->value.dim(1));
        auto h = nn::group_norm(tape, x, params_.at(p + ".norm1.gamma"), params_.at(p + ".norm1.beta"),
                                norm_groups_for(c, cfg_.norm_groups));
        h = nn::silu(tape, h);
        h = nn::conv2d(tape, h, params_.at(p + ".conv1.weight"), params_.at(p + ".conv1.bias"), 1, 1);
        h = nn::group_norm(tape, h, params_.at(p + ".norm2.gamma"), params_.at(p + ".norm2.beta"),
                           norm_groups_for(c, cfg_.norm_groups));
        h = nn::silu(tape, h);
        h = nn::conv2d(tape, h, params_.at(p + ".conv2.weight"), params_.at(p + ".conv2.bias"), 1, 1);
        return nn::add(tape, x, h);
    }

    void add_conv(const std::string& p, int out_c, int in_c, int k, uint64_t seed) {
        Rng rng(hash64(p + ".weight", seed));
        params_.add(p + ".weight",
                    Tensor<T>::randn({out_c, in_c, k, k}, rng, static_cast<T>(std::sqrt(2.0 / (in_c * k * k)))));
        params_.add(p + ".bias", Tensor<T>::zeros({out_c}));
    }

    void build_params(uint64_t seed) {
        const auto& ch = cfg_.stage_channels;
        add_conv("stem", ch[0], 1, 3, seed);
        for (size_t s = 0; s < ch.size(); ++s) {
            const std::string sp = "stage" + std::to_string(s);
            if (s > 0) add_conv(sp + ".down", ch[s], ch[s - 1], 3, seed);
            for (int b = 0; b < cfg_.blocks_per_stage; ++b) {
                const std::string bp = sp + ".res" + std::to_string(b);
                params_.add(bp + ".norm1.gamma", Tensor<T>::full({ch[s]}, T(1)));
                params_.add(bp + ".norm1.beta", Tensor<T>::zeros({ch[s]}));
                add_conv(bp + ".conv1", ch[s], ch[s], 3, seed);
                params_.add(bp + ".norm2.gamma", Tensor<T>::full({ch[s]}, T(1)));
                params_.add(bp + ".norm2.beta", Tensor<T>::zeros({ch[s]}));
                add_conv(bp + ".conv2", ch[s], ch[s], 3, seed);
            }
        }
        const int last = ch.back();
        params_.add("head.norm.gamma", Tensor<T>::full({last}, T(1)));
        params_.add("head.norm.beta", Tensor<T>::zeros({last}));
        {
            Rng rng(hash64("head.script.weight", seed));
            params_.add("head.script.weight",
                        Tensor<T>::randn({scripts_.size(), last}, rng, static_cast<T>(std::sqrt(1.0 / last))));
            params_.add("head.script.bias", Tensor<T>::zeros({scripts_.size()}));
        }
        {
            Rng rng(hash64("head.character.weight", seed));
            params_.add("head.character.weight",
                        Tensor<T>::randn({characters_.size(), last}, rng, static_cast<T>(std::sqrt(1.0 / last))));
            params_.add("head.character.bias", Tensor<T>::zeros({characters_.size()}));
        }
    }

    ClassifierConfig cfg_;
    Vocabulary scripts_;
    Vocabulary characters_;
    ParamStore<T> params_;
};

using MultitaskClassifier32 = MultitaskClassifier<float>;

struct ClassifierTrainReport {
    std::vector<double> epoch_losses;
    double holdout_script_accuracy = 0.0;
    double holdout_character_accuracy = 0.0;
};

/// Trains from scratch on the train split (summed cross-entropy of both
/// heads) and reports held-out accuracy on the test split.
inline std::pair<MultitaskClassifier32, ClassifierTrainReport> train_classifier(
    const DatasetManifest& train_manifest, const DatasetManifest& test_manifest,
    const ClassifierConfig& config) {
    if (train_manifest.empty()) throw DataError("train_classifier: empty manifest");
    std::set<std::string> scripts, chars;
    for (const auto& r : train_manifest.records) {
        scripts.insert(r.script);
        chars.insert(r.character);
    }
    if (scripts.size() < 2 || chars.size() < 2)
        throw DataError("train_classifier: need at least 2 scripts and 2 characters, got " +
                        std::to_string(scripts.size()) + " script(s) / " + std::to_string(chars.size()) +
                        " character(s)");
    MultitaskClassifier32 model(config, Vocabulary::build(scripts, false), Vocabulary::build(chars, false),
                                config.seed);

    const auto train_data = load_dataset_images(train_manifest);
    const int64_t hw = static_cast<int64_t>(config.image_size) * config.image_size;
    AdamW<float> opt(AdamConfig{config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});
    Rng order_rng(hash_mix(config.seed, 0x434c53u));

    ClassifierTrainReport report;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<size_t> perm(train_data.size());
        std::iota(perm.begin(), perm.end(), size_t{0});
        order_rng.shuffle(perm);
        double epoch_loss = 0.0;
        int64_t steps = 0;
        for (size_t base = 0; base < perm.size(); base += static_cast<size_t>(config.batch_size)) {
            const size_t n = std::min(static_cast<size_t>(config.batch_size), perm.size() - base);
            Tensor32 x({static_cast<int64_t>(n), 1, config.image_size, config.image_size});
            std::vector<int> script_labels(n), char_labels(n);
            for (size_t i = 0; i < n; ++i) {
                const auto& [img, cond] = train_data[perm[base + i]];
                if (img.width != config.image_size)
                    throw DataError("train_classifier: image size mismatch for " + cond.character);
                std::copy(img.values.begin(), img.values.end(), x.data.begin() + static_cast<int64_t>(i) * hw);
                script_labels[i] = model.scripts().id(cond.script);
                char_labels[i] = model.characters().id(cond.character);
            }
            Tape<float> tape;
            auto [script_logits, char_logits] = model.forward(&tape, constant(std::move(x)));
            auto loss = nn::add(&tape, nn::softmax_cross_entropy(&tape, script_logits, script_labels),
                                nn::softmax_cross_entropy(&tape, char_logits, char_labels));
            if (!std::isfinite(static_cast<double>(loss->value[0])))
                throw NumericError("train_classifier: non-finite loss in epoch " + std::to_string(epoch));
            model.params().zero_grads();
            tape.backward(loss);
            opt.step(named_params<float>(model.params()));
            epoch_loss += static_cast<double>(loss->value[0]);
            ++steps;
        }
        report.epoch_losses.push_back(epoch_loss / static_cast<double>(std::max<int64_t>(1, steps)));
    }

    if (!test_manifest.empty()) {
        const auto test_data = load_dataset_images(test_manifest);
        std::vector<GlyphImage> images;
        images.reserve(test_data.size());
        for (const auto& [img, cond] : test_data) images.push_back(img);
        const auto preds = model.predict(images);
        int64_t script_ok = 0, char_ok = 0;
        for (size_t i = 0; i < preds.size(); ++i) {
            const auto& cond = test_data[i].second;
            if (preds[i].script_id == model.scripts().id(cond.script)) ++script_ok;
            if (preds[i].character_id == model.characters().id(cond.character)) ++char_ok;
        }
        report.holdout_script_accuracy = static_cast<double>(script_ok) / static_cast<double>(preds.size());
        report.holdout_character_accuracy = static_cast<double>(char_ok) / static_cast<double>(preds.size());
    }
    return {std::move(model), std::move(report)};
}

inline void save_classifier(const std::string& dir, const MultitaskClassifier32& model) {
    std::filesystem::create_directories(dir);
    nlohmann::json meta{{"format", "glyphdiff-classifier-v1"},
                        {"config", model.config().to_json()},
                        {"scripts", model.scripts().labels()},
                        {"characters", model.characters().labels()}};
    std::ofstream out(std::filesystem::path(dir) / "meta.json");
    if (!out) throw DataError("cannot write classifier meta: " + dir);
    out << meta.dump(2) << '\n';
    for (const auto& [name, var] : model.params())
        write_tensor_f32((std::filesystem::path(dir) / name).string(), var->value);
}

inline MultitaskClassifier32 load_classifier(const std::string& dir) {
    std::ifstream in(std::filesystem::path(dir) / "meta.json");
    if (!in) throw DataError("not a classifier directory (no meta.json): " + dir);
    nlohmann::json meta;
    try {
        in >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad classifier meta in " + dir + ": " + e.what());
    }
    if (meta.value("format", "") != "glyphdiff-classifier-v1")
        throw DataError("unsupported classifier format in " + dir);
    ClassifierConfig cfg = ClassifierConfig::from_json(meta.at("config"));
    Vocabulary scripts = Vocabulary::from_labels(meta.at("scripts").get<std::vector<std::string>>());
    Vocabulary characters = Vocabulary::from_labels(meta.at("characters").get<std::vector<std::string>>());
    MultitaskClassifier32 ref(cfg, scripts, characters, 0);
    std::map<std::string, Tensor32> tensors;
    for (const auto& name : ref.params().names())
        tensors[name] = read_tensor_f32((std::filesystem::path(dir) / name).string(),
                                        ref.params().at(name)->value.shape);
    return MultitaskClassifier32(cfg, std::move(scripts), std::move(characters), std::move(tensors));
}

}  // namespace glyphdiff
