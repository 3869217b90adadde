// Copyright (c) 2026 The glyphdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "glyphdiff/checkpoint.hpp"
#include "glyphdiff/diffusion.hpp"
#include "glyphdiff/optim.hpp"
#include "glyphdiff/unet.hpp"

namespace glyphdiff {

/// Rank-decomposed update for one 2-D weight: the effective weight is
/// W + scale * A * B. B starts at zero, so injection is output-transparent
/// until training moves it.
template <typename T>
struct LoraAdapter {
    std::string target_path;
    Var<T> a;  // [d_out, rank]
    Var<T> b;  // [rank, d_in]
    int rank = 0;
    T scale = T(1);

    int64_t parameter_count() const { return a->value.numel() + b->value.numel(); }
};

/// Minimal glob: '*' spans any run, '?' one byte.
inline bool glob_match(const std::string& pattern, const std::string& text) {
    size_t p = 0, t = 0, star_p = std::string::npos, star_t = 0;
    while (t < text.size()) {
        if (p < pattern.size() && (pattern[p] == text[t] || pattern[p] == '?')) {
            ++p;
            ++t;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star_p = p++;
            star_t = t;
        } else if (star_p != std::string::npos) {
            p = star_p + 1;
            t = ++star_t;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') ++p;
    return p == pattern.size();
}

/// Default adapter targets: every cross-attention projection weight.
template <typename T>
inline std::vector<std::string> default_lora_targets(const NoisePredictor<T>& model) {
    std::vector<std::string> out;
    for (const auto& name : model.params().names()) {
        if (glob_match("*.attn.q.weight", name) || glob_match("*.attn.k.weight", name) ||
            glob_match("*.attn.v.weight", name) || glob_match("*.attn.out.weight", name))
            out.push_back(name);
    }
    return out;
}

template <typename T>
inline std::vector<std::string> lora_targets_matching(const NoisePredictor<T>& model, const std::string& pattern) {
    std::vector<std::string> out;
    for (const auto& name : model.params().names())
        if (glob_match(pattern, name)) out.push_back(name);
    return out;
}

/// A frozen base predictor plus trainable adapters, and optionally extra
/// character-embedding rows for labels the base has never seen. The base's
/// tensors are cloned at construction and never written again; fine-tuning
/// touches only adapter matrices and appended rows.
template <typename T>
class AdaptedModel {
public:
    AdaptedModel(const NoisePredictor<T>& base, const std::vector<std::string>& targets, int rank,
                 double alpha, uint64_t seed)
        : base_(base.clone()), vocab_(base.vocab()) {
        if (rank < 1) throw UsageError("lora: rank must be >= 1");
        base_.params().set_requires_grad(false);
        for (const auto& path : targets) {
            const Var<T>& w = base_.params().at(path);  // throws on unknown path
            if (w->value.rank() != 2)
                throw UsageError("lora: target " + path + " is not a 2-D weight");
            const int64_t d_out = w->value.dim(0), d_in = w->value.dim(1);
            if (rank > std::min(d_out, d_in))
                throw UsageError("lora: rank " + std::to_string(rank) + " exceeds dims of " + path);
            if (adapters_.count(path)) throw UsageError("lora: duplicate target " + path);
            LoraAdapter<T> ad;
            ad.target_path = path;
            ad.rank = rank;
            ad.scale = static_cast<T>(alpha / rank);
            Rng rng(hash64("lora." + path, seed));
            ad.a = make_param(Tensor<T>::randn({d_out, rank}, rng, T(0.01)));
            ad.b = make_param(Tensor<T>::zeros({rank, d_in}));
            adapters_.emplace(path, std::move(ad));
        }
        appended_rows_ = make_param(Tensor<T>::zeros({0, base_.config().embed_dim}));
    }

    const NoisePredictor<T>& base() const { return base_; }
    const ModelConfig& config() const { return base_.config(); }
    const Vocabularies& vocab() const { return vocab_; }
    std::map<std::string, LoraAdapter<T>>& adapters() { return adapters_; }
    const std::map<std::string, LoraAdapter<T>>& adapters() const { return adapters_; }
    const Var<T>& appended_rows() const { return appended_rows_; }
    Var<T>& appended_rows() { return appended_rows_; }
    const std::vector<std::string>& appended_characters() const { return appended_chars_; }

    int64_t adapter_parameter_count() const {
        int64_t n = 0;
        for (const auto& [path, ad] : adapters_) n += ad.parameter_count();
        return n;
    }

    /// Registers a character unknown to the base vocabulary and gives it a
    /// fresh trainable embedding row.
    int add_character(const std::string& label, uint64_t seed) {
        const int id = vocab_.characters.append(label);
        Tensor<T> rows({static_cast<int64_t>(appended_chars_.size()) + 1, base_.config().embed_dim});
        std::copy(appended_rows_->value.data.begin(), appended_rows_->value.data.end(), rows.data.begin());
        Rng rng(hash64("lora.char_row." + label, seed));
        for (int64_t d = 0; d < base_.config().embed_dim; ++d)
            rows[appended_rows_->value.numel() + d] = static_cast<T>(0.1 * rng.gaussian());
        appended_rows_ = make_param(std::move(rows));
        appended_chars_.push_back(label);
        return id;
    }

    /// Parameters fine-tuning is allowed to move, in deterministic order.
    std::vector<std::pair<std::string, Var<T>>> trainable_params() const {
        std::vector<std::pair<std::string, Var<T>>> out;
        for (const auto& [path, ad] : adapters_) {
            out.emplace_back("lora." + path + ".A", ad.a);
            out.emplace_back("lora." + path + ".B", ad.b);
        }
        if (appended_rows_->value.dim(0) > 0) out.emplace_back("lora.cond.char_embed.appended", appended_rows_);
        return out;
    }

    WeightResolver<T> resolver() const {
        return [this](Tape<T>* tape, const std::string& name, const Var<T>& base_w) -> Var<T> {
            if (name == "cond.char_embed" && appended_rows_->value.dim(0) > 0)
                return nn::concat_rows(tape, base_w, appended_rows_);
            auto it = adapters_.find(name);
            if (it == adapters_.end()) return base_w;
            auto delta = nn::matmul(tape, it->second.a, it->second.b);
            delta = nn::mul_scalar(tape, delta, it->second.scale);
            return nn::add(tape, base_w, delta);
        };
    }

    Var<T> embed_conditions(Tape<T>* tape, const std::vector<ConditionIds>& ids) const {
        return base_.embed_conditions(tape, ids, resolver());
    }

    Var<T> forward(Tape<T>* tape, const Var<T>& x, const std::vector<int>& ts, const Var<T>& ctx) const {
        return base_.forward(tape, x, ts, ctx, resolver());
    }

    /// Same contract as the base predictor's surface, with every adapted
    /// weight acting as W + scale*A*B.
    Tensor32 predict_noise(const Tensor32& x_t, int t, const ConditionEmbedding& cond) const {
        if (x_t.rank() != 4 || x_t.dim(0) != 1) throw UsageError("predict_noise: expects [1,1,H,W]");
        if (cond.dim() != config().embed_dim) throw UsageError("predict_noise: embedding dim mismatch");
        auto xv = constant(x_t.template cast<T>());
        auto ctx = constant(cond.tokens.template cast<T>().reshaped({1, 3, config().embed_dim}));
        auto out = forward(nullptr, xv, {t}, ctx);
        if (!out->value.all_finite()) throw NumericError("predict_noise: non-finite output at t=" + std::to_string(t));
        return out->value.template cast<float>();
    }

    ConditionEmbedding encode_condition(const Condition& cond) const {
        const ConditionIds ids = condition_to_ids(cond, vocab_);
        auto ctx = embed_conditions(nullptr, {ids});
        ConditionEmbedding e;
        e.tokens = ctx->value.template cast<float>().reshaped({3, config().embed_dim});
        return e;
    }

    /// Bakes the adapters into a standalone predictor. Appended embedding
    /// rows become ordinary rows of the (extended) character table; the
    /// base instance is untouched.
    NoisePredictor<T> merge() const {
        std::map<std::string, Tensor<T>> tensors;
        for (const auto& [name, var] : base_.params()) tensors[name] = var->value;
        for (const auto& [path, ad] : adapters_) {
            Tensor<T>& w = tensors.at(path);
            const int64_t d_out = w.dim(0), d_in = w.dim(1);
            Tensor<T> delta({d_out, d_in});
            gemm(ad.a->value.ptr(), ad.b->value.ptr(), delta.ptr(), d_out, ad.rank, d_in);
            for (int64_t i = 0; i < w.numel(); ++i) w[i] += ad.scale * delta[i];
        }
        if (!appended_chars_.empty()) {
            const Tensor<T>& tbl = tensors.at("cond.char_embed");
            Tensor<T> extended({tbl.dim(0) + appended_rows_->value.dim(0), tbl.dim(1)});
            std::copy(tbl.data.begin(), tbl.data.end(), extended.data.begin());
            std::copy(appended_rows_->value.data.begin(), appended_rows_->value.data.end(),
                      extended.data.begin() + tbl.data.size());
            tensors["cond.char_embed"] = std::move(extended);
        }
        return NoisePredictor<T>(base_.config(), vocab_, std::move(tensors));
    }

private:
    NoisePredictor<T> base_;
    Vocabularies vocab_;
    std::map<std::string, LoraAdapter<T>> adapters_;
    Var<T> appended_rows_;  // [n_appended, D]
    std::vector<std::string> appended_chars_;
};

template <typename T>
inline AdaptedModel<T> inject(const NoisePredictor<T>& base, const std::vector<std::string>& targets,
                              int rank, double alpha = -1.0, uint64_t seed = 0) {
    return AdaptedModel<T>(base, targets, rank, alpha < 0 ? static_cast<double>(rank) : alpha, seed);
}

/// One-shot fine-tuning: fresh (t, eps) on the same image every step,
/// Adam over adapters (plus the new character row when the label is
/// novel). Returns the per-step loss series.
template <typename T>
inline std::vector<double> fine_tune_one_shot(AdaptedModel<T>& model, const GlyphImage& image,
                                              const Condition& cond, int steps, double learning_rate,
                                              const NoiseSchedule& sched, Rng& rng) {
    if (steps < 1) throw UsageError("fine_tune_one_shot: need at least one step");
    const ModelConfig& cfg = model.config();
    if (image.width != cfg.image_size || image.height != cfg.image_size)
        throw DataError("fine_tune_one_shot: image is " + std::to_string(image.width) + "x" +
                        std::to_string(image.height) + ", model expects " + std::to_string(cfg.image_size));
    if (!model.vocab().characters.contains(cond.character))
        model.add_character(cond.character, rng.next_u64());
    const ConditionIds ids = condition_to_ids(cond, model.vocab());

    AdamConfig acfg;
    acfg.learning_rate = learning_rate;
    AdamW<T> opt(acfg);
    const Tensor<T> x0 = image.to_tensor().template cast<T>();
    const auto trainable = model.trainable_params();

    std::vector<double> losses;
    losses.reserve(static_cast<size_t>(steps));
    for (int step = 0; step < steps; ++step) {
        const int t = sample_timestep(rng, sched.num_steps);
        Tensor<T> eps(x0.shape);
        for (auto& e : eps.data) e = static_cast<T>(rng.gaussian());
        const double ab = sched.alpha_bar(t);
        Tensor<T> x_t(x0.shape);
        const T signal = static_cast<T>(std::sqrt(ab)), noise = static_cast<T>(std::sqrt(1.0 - ab));
        for (int64_t i = 0; i < x0.numel(); ++i) x_t[i] = signal * x0[i] + noise * eps[i];

        Tape<T> tape;
        auto ctx = model.embed_conditions(&tape, {ids});
        auto out = model.forward(&tape, constant(std::move(x_t)), {t}, ctx);
        auto loss = nn::mse_loss(&tape, out, std::move(eps));
        const double loss_value = static_cast<double>(loss->value[0]);
        if (!std::isfinite(loss_value))
            throw NumericError("fine_tune_one_shot: non-finite loss at step " + std::to_string(step));
        for (const auto& [name, var] : trainable) var->zero_grad();
        tape.backward(loss);
        opt.step(trainable);
        losses.push_back(loss_value);
    }
    return losses;
}

/// Adapter checkpoint: lora.meta.json plus raw float32 files, same
/// directory conventions as full checkpoints with every file prefixed
/// "lora.".
template <typename T>
inline void save_adapter(const std::string& dir, const AdaptedModel<T>& model) {
    std::filesystem::create_directories(dir);
    std::vector<std::string> targets;
    int rank = 0;
    double scale = 1.0;
    for (const auto& [path, ad] : model.adapters()) {
        targets.push_back(path);
        rank = ad.rank;
        scale = static_cast<double>(ad.scale);
        write_tensor_f32((std::filesystem::path(dir) / ("lora." + path + ".A")).string(),
                         ad.a->value.template cast<float>());
        write_tensor_f32((std::filesystem::path(dir) / ("lora." + path + ".B")).string(),
                         ad.b->value.template cast<float>());
    }
    nlohmann::json meta{{"format", "glyphdiff-lora-v1"},
                        {"targets", targets},
                        {"rank", rank},
                        {"scale", scale},
                        {"appended_characters", model.appended_characters()}};
    if (!model.appended_characters().empty())
        write_tensor_f32((std::filesystem::path(dir) / "lora.cond.char_embed.appended").string(),
                         model.appended_rows()->value.template cast<float>());
    std::ofstream out(std::filesystem::path(dir) / "lora.meta.json");
    if (!out) throw DataError("cannot write adapter meta: " + dir);
    out << meta.dump(2) << '\n';
}

template <typename T>
inline AdaptedModel<T> load_adapter(const std::string& dir, const NoisePredictor<T>& base) {
    const auto meta_path = std::filesystem::path(dir) / "lora.meta.json";
    std::ifstream in(meta_path);
    if (!in) throw DataError("not an adapter directory (no lora.meta.json): " + dir);
    nlohmann::json meta;
    try {
        in >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad adapter meta in " + dir + ": " + e.what());
    }
    if (meta.value("format", "") != "glyphdiff-lora-v1")
        throw DataError("unsupported adapter format in " + dir);
    const auto targets = meta.at("targets").get<std::vector<std::string>>();
    const int rank = meta.at("rank").get<int>();
    const double scale = meta.at("scale").get<double>();

    AdaptedModel<T> model(base, targets, rank, scale * rank, 0);
    for (auto& [path, ad] : model.adapters()) {
        ad.a->value = read_tensor_f32((std::filesystem::path(dir) / ("lora." + path + ".A")).string(),
                                      ad.a->value.shape)
                          .template cast<T>();
        ad.b->value = read_tensor_f32((std::filesystem::path(dir) / ("lora." + path + ".B")).string(),
                                      ad.b->value.shape)
                          .template cast<T>();
    }
    const auto appended = meta.at("appended_characters").get<std::vector<std::string>>();
    for (const auto& label : appended) model.add_character(label, 0);
    if (!appended.empty()) {
        const Tensor32 rows =
            read_tensor_f32((std::filesystem::path(dir) / "lora.cond.char_embed.appended").string(),
                            {static_cast<int64_t>(appended.size()), base.config().embed_dim});
        model.appended_rows()->value = rows.template cast<T>();
    }
    return model;
}

}  // namespace glyphdiff
