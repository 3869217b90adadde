// Copyright (c) 2026 The glyphdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "glyphdiff/condition.hpp"
#include "glyphdiff/nn.hpp"
#include "glyphdiff/random.hpp"

namespace glyphdiff {

/// Architecture of the noise predictor. Desk defaults train on a CPU in
/// about an hour while keeping every mechanism of the full-scale model:
/// timestep embedding, down/mid/up blocks with skips, and cross-attention
/// over the three condition tokens at the coarsest resolutions.
struct ModelConfig {
    int image_size = 32;
    std::vector<int> block_channels = {32, 64, 128};
    int layers_per_block = 1;
    int embed_dim = 64;  // condition token width D
    int heads = 4;
    int num_timesteps = 200;
    int time_sin_dim = 64;
    int time_dim = 128;
    int norm_groups = 8;
    std::vector<int> attention_levels = {1, 2};  // mid block always attends
    int num_characters = 0;
    int num_scripts = 0;
    int num_styles = 0;

    int levels() const { return static_cast<int>(block_channels.size()); }

    void validate() const {
        if (image_size < 4) throw UsageError("model: image_size too small");
        if (block_channels.empty()) throw UsageError("model: need at least one level");
        const int down_factor = 1 << (levels() - 1);
        if (image_size % down_factor != 0)
            throw UsageError("model: image_size must be divisible by 2^(levels-1)");
        if (layers_per_block < 1) throw UsageError("model: layers_per_block must be >= 1");
        if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0)
            throw UsageError("model: attention head count must divide embed_dim");
        if (time_sin_dim < 2 || time_sin_dim % 2 != 0) throw UsageError("model: time_sin_dim must be even");
        if (num_timesteps < 1) throw UsageError("model: num_timesteps must be >= 1");
        for (int lvl : attention_levels) {
            if (lvl < 0 || lvl >= levels()) throw UsageError("model: attention level out of range");
            if (block_channels[static_cast<size_t>(lvl)] % heads != 0)
                throw UsageError("model: heads must divide channels at attention levels");
        }
        if (block_channels.back() % heads != 0)
            throw UsageError("model: heads must divide mid-block channels");
        if (num_characters < 1) throw UsageError("model: character vocabulary is empty");
        if (num_scripts < 1 || num_styles < 1) throw UsageError("model: script/style vocabulary is empty");
    }

    bool attends(int level) const {
        for (int l : attention_levels)
            if (l == level) return true;
        return false;
    }

    nlohmann::json to_json() const {
        return nlohmann::json{{"image_size", image_size},
                              {"block_channels", block_channels},
                              {"layers_per_block", layers_per_block},
                              {"embed_dim", embed_dim},
                              {"heads", heads},
                              {"num_timesteps", num_timesteps},
                              {"time_sin_dim", time_sin_dim},
                              {"time_dim", time_dim},
                              {"norm_groups", norm_groups},
                              {"attention_levels", attention_levels},
                              {"num_characters", num_characters},
                              {"num_scripts", num_scripts},
                              {"num_styles", num_styles}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.image_size = j.value("image_size", c.image_size);
        c.block_channels = j.value("block_channels", c.block_channels);
        c.layers_per_block = j.value("layers_per_block", c.layers_per_block);
        c.embed_dim = j.value("embed_dim", c.embed_dim);
        c.heads = j.value("heads", c.heads);
        c.num_timesteps = j.value("num_timesteps", c.num_timesteps);
        c.time_sin_dim = j.value("time_sin_dim", c.time_sin_dim);
        c.time_dim = j.value("time_dim", c.time_dim);
        c.norm_groups = j.value("norm_groups", c.norm_groups);
        c.attention_levels = j.value("attention_levels", c.attention_levels);
        c.num_characters = j.value("num_characters", c.num_characters);
        c.num_scripts = j.value("num_scripts", c.num_scripts);
        c.num_styles = j.value("num_styles", c.num_styles);
        return c;
    }
};

/// Named parameter tensors; the dotted path is the identity used by
/// checkpoints, adapters and the optimizer. Iteration order is the sorted
/// path order, which keeps every pass over the parameters deterministic.
template <typename T>
class ParamStore {
public:
    Var<T>& add(const std::string& name, Tensor<T> value) {
        if (params_.count(name)) throw UsageError("duplicate parameter: " + name);
        return params_[name] = make_param(std::move(value));
    }

    const Var<T>& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw DataError("unknown parameter path: " + name);
        return it->second;
    }

    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(params_.size());
        for (const auto& [k, v] : params_) out.push_back(k);
        return out;
    }

    int64_t parameter_count() const {
        int64_t n = 0;
        for (const auto& [k, v] : params_) n += v->value.numel();
        return n;
    }

    void zero_grads() {
        for (auto& [k, v] : params_) v->zero_grad();
    }

    void set_requires_grad(bool flag) {
        for (auto& [k, v] : params_) v->requires_grad = flag;
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    size_t size() const { return params_.size(); }

private:
    std::map<std::string, Var<T>> params_;
};

/// Resolves a parameter path to the tensor actually used by the forward
/// pass; low-rank adapters hook this to splice W + scale*A*B onto the tape.
template <typename T>
using WeightResolver = std::function<Var<T>(Tape<T>*, const std::string&, const Var<T>&)>;

inline int norm_groups_for(int channels, int requested) {
    return std::gcd(channels, requested);
}

/// The conditional noise predictor: a small U-Net over [B,1,H,W] images
/// with sinusoidal timestep embedding and cross-attention over the three
/// condition tokens at the mid block and the configured levels.
template <typename T>
class NoisePredictor {
public:
    NoisePredictor(ModelConfig cfg, Vocabularies vocab, uint64_t seed)
        : config_(std::move(cfg)), vocab_(std::move(vocab)) {
        config_.num_characters = vocab_.characters.size();
        config_.num_scripts = vocab_.scripts.size();
        config_.num_styles = vocab_.styles.size();
        config_.validate();
        build_params(seed);
    }

    /// Wraps already-loaded tensors (checkpoint restore). Parameter names
    /// must match exactly what build_params would create.
    NoisePredictor(ModelConfig cfg, Vocabularies vocab, std::map<std::string, Tensor<T>> tensors)
        : config_(std::move(cfg)), vocab_(std::move(vocab)) {
        config_.num_characters = vocab_.characters.size();
        config_.num_scripts = vocab_.scripts.size();
        config_.num_styles = vocab_.styles.size();
        config_.validate();
        NoisePredictor ref(config_, vocab_, 0);
        for (const auto& name : ref.params_.names()) {
            auto it = tensors.find(name);
            if (it == tensors.end()) throw DataError("checkpoint missing parameter: " + name);
            if (it->second.shape != ref.params_.at(name)->value.shape)
                throw DataError("checkpoint parameter " + name + " has shape " + shape_str(it->second.shape) +
                                ", expected " + shape_str(ref.params_.at(name)->value.shape));
            params_.add(name, std::move(it->second));
            tensors.erase(it);
        }
        if (!tensors.empty()) throw DataError("checkpoint has unknown parameter: " + tensors.begin()->first);
    }

    // Nodes are shared pointers; an implicit copy would alias parameters
    // between two models. Clone explicitly instead.
    NoisePredictor(const NoisePredictor&) = delete;
    NoisePredictor& operator=(const NoisePredictor&) = delete;
    NoisePredictor(NoisePredictor&&) noexcept = default;
    NoisePredictor& operator=(NoisePredictor&&) noexcept = default;

    NoisePredictor clone() const {
        std::map<std::string, Tensor<T>> tensors;
        for (const auto& [name, var] : params_) tensors[name] = var->value;
        return NoisePredictor(config_, vocab_, std::move(tensors));
    }

    const ModelConfig& config() const { return config_; }
    const Vocabularies& vocab() const { return vocab_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    int64_t parameter_count() const { return params_.parameter_count(); }

    /// Three table lookups plus learned slot offsets -> [B,3,D] context.
    Var<T> embed_conditions(Tape<T>* tape, const std::vector<ConditionIds>& ids,
                            const WeightResolver<T>& resolver = nullptr) const {
        std::vector<int> cs, ss, ys;
        cs.reserve(ids.size());
        for (const auto& i : ids) {
            cs.push_back(i.character);
            ss.push_back(i.script);
            ys.push_back(i.style);
        }
        auto t0 = nn::embedding_rows(tape, weight(tape, "cond.char_embed", resolver), std::move(cs));
        auto t1 = nn::embedding_rows(tape, weight(tape, "cond.script_embed", resolver), std::move(ss));
        auto t2 = nn::embedding_rows(tape, weight(tape, "cond.style_embed", resolver), std::move(ys));
        auto ctx = nn::stack3(tape, t0, t1, t2);
        return nn::add_broadcast_rows(tape, ctx, weight(tape, "cond.slot_offset", resolver));
    }

    /// Spec surface: one condition -> its token block, deterministically.
    ConditionEmbedding encode_condition(const Condition& cond) const {
        const ConditionIds ids = condition_to_ids(cond, vocab_);
        auto ctx = embed_conditions(nullptr, {ids});
        ConditionEmbedding e;
        e.tokens = ctx->value.template cast<float>().reshaped({3, config_.embed_dim});
        return e;
    }

    /// Batched forward pass, differentiable when a tape is given.
    /// x: [B,1,H,W], ts: one timestep per sample, ctx: [B,3,D].
    Var<T> forward(Tape<T>* tape, const Var<T>& x, const std::vector<int>& ts, const Var<T>& ctx,
                   const WeightResolver<T>& resolver = nullptr) const {
        const int64_t B = x->value.dim(0);
        if (x->value.rank() != 4 || x->value.dim(1) != 1 || x->value.dim(2) != config_.image_size ||
            x->value.dim(3) != config_.image_size)
            throw UsageError("forward: input shape " + shape_str(x->value.shape) + " does not match config");
        if (static_cast<int64_t>(ts.size()) != B) throw UsageError("forward: need one timestep per sample");
        if (ctx->value.rank() != 3 || ctx->value.dim(0) != B || ctx->value.dim(1) != 3 ||
            ctx->value.dim(2) != config_.embed_dim)
            throw UsageError("forward: context shape mismatch");

        // Timestep features are a pure function of t; the MLP on top is learned.
        Tensor<T> sins({B, config_.time_sin_dim});
        for (int64_t b = 0; b < B; ++b) {
            const Tensor<T> e = timestep_embedding<T>(ts[static_cast<size_t>(b)], config_.time_sin_dim,
                                                      config_.num_timesteps);
            std::copy(e.data.begin(), e.data.end(), sins.ptr() + b * config_.time_sin_dim);
        }
        auto temb = nn::linear(tape, constant(std::move(sins)), weight(tape, "time.fc1.weight", resolver),
                               weight(tape, "time.fc1.bias", resolver));
        temb = nn::silu(tape, temb);
        temb = nn::linear(tape, temb, weight(tape, "time.fc2.weight", resolver),
                          weight(tape, "time.fc2.bias", resolver));
        temb = nn::silu(tape, temb);

        auto h = nn::conv2d(tape, x, weight(tape, "unet.conv_in.weight", resolver),
                            weight(tape, "unet.conv_in.bias", resolver), 1, 1);

        const int levels = config_.levels();
        std::vector<Var<T>> skips;
        for (int lvl = 0; lvl < levels; ++lvl) {
            for (int i = 0; i < config_.layers_per_block; ++i)
                h = res_block(tape, "unet.down" + std::to_string(lvl) + ".res" + std::to_string(i), h, temb,
                              resolver);
            if (config_.attends(lvl)) h = attn_block(tape, "unet.down" + std::to_string(lvl) + ".attn", h, ctx, resolver);
            skips.push_back(h);
            if (lvl + 1 < levels) {
                const std::string p = "unet.down" + std::to_string(lvl) + ".downsample";
                h = nn::conv2d(tape, h, weight(tape, p + ".weight", resolver), weight(tape, p + ".bias", resolver), 2, 1);
            }
        }

        h = res_block(tape, "unet.mid.res1", h, temb, resolver);
        h = attn_block(tape, "unet.mid.attn", h, ctx, resolver);
        h = res_block(tape, "unet.mid.res2", h, temb, resolver);

        for (int lvl = levels - 1; lvl >= 0; --lvl) {
            h = nn::concat_channels(tape, h, skips[static_cast<size_t>(lvl)]);
            for (int i = 0; i < config_.layers_per_block; ++i)
                h = res_block(tape, "unet.up" + std::to_string(lvl) + ".res" + std::to_string(i), h, temb,
                              resolver);
            if (config_.attends(lvl)) h = attn_block(tape, "unet.up" + std::to_string(lvl) + ".attn", h, ctx, resolver);
            if (lvl > 0) {
                const std::string p = "unet.up" + std::to_string(lvl) + ".upsample";
                h = nn::upsample_nearest2(tape, h);
                h = nn::conv2d(tape, h, weight(tape, p + ".weight", resolver), weight(tape, p + ".bias", resolver), 1, 1);
            }
        }

        h = nn::group_norm(tape, h, weight(tape, "unet.out_norm.gamma", resolver),
                           weight(tape, "unet.out_norm.beta", resolver),
                           norm_groups_for(config_.block_channels[0], config_.norm_groups));
        h = nn::silu(tape, h);
        h = nn::conv2d(tape, h, weight(tape, "unet.conv_out.weight", resolver),
                       weight(tape, "unet.conv_out.bias", resolver), 1, 1);
        return h;
    }

    /// Spec surface: single-sample noise prediction from a precomputed
    /// condition embedding. Throws NumericError if the output goes
    /// non-finite.
    Tensor32 predict_noise(const Tensor32& x_t, int t, const ConditionEmbedding& cond) const {
        if (x_t.rank() != 4 || x_t.dim(0) != 1) throw UsageError("predict_noise: expects [1,1,H,W]");
        if (cond.dim() != config_.embed_dim) throw UsageError("predict_noise: embedding dim mismatch");
        auto xv = constant(x_t.template cast<T>());
        auto ctx = constant(cond.tokens.template cast<T>().reshaped({1, 3, config_.embed_dim}));
        auto out = forward(nullptr, xv, {t}, ctx);
        if (!out->value.all_finite()) throw NumericError("predict_noise: non-finite output at t=" + std::to_string(t));
        return out->value.template cast<float>();
    }

private:
    friend class NoisePredictorAccess;

    Var<T> weight(Tape<T>* tape, const std::string& name, const WeightResolver<T>& resolver) const {
        const Var<T>& base = params_.at(name);
        if (resolver) return resolver(tape, name, base);
        return base;
    }

    Var<T> res_block(Tape<T>* tape, const std::string& p, const Var<T>& x, const Var<T>& temb,
                     const WeightResolver<T>& resolver) const {
        const int in_c = static_cast<int>(x->value.dim(1));
        auto h = nn::group_norm(tape, x, weight(tape, p + ".norm1.gamma", resolver),
                                weight(tape, p + ".norm1.beta", resolver),
                                norm_groups_for(in_c, config_.norm_groups));
        h = nn::silu(tape, h);
        h = nn::conv2d(tape, h, weight(tape, p + ".conv1.weight", resolver), weight(tape, p + ".conv1.bias", resolver), 1, 1);
        auto tv = nn::linear(tape, temb, weight(tape, p + ".time_proj.weight", resolver),
                             weight(tape, p + ".time_proj.bias", resolver));
        h = nn::add_channel_vec(tape, h, tv);
        const int out_c = static_cast<int>(h->value.dim(1));
        h = nn::group_norm(tape, h, weight(tape, p + ".norm2.gamma", resolver),
                           weight(tape, p + ".norm2.beta", resolver),
                           norm_groups_for(out_c, config_.norm_groups));
        h = nn::silu(tape, h);
        h = nn::conv2d(tape, h, weight(tape, p + ".conv2.weight", resolver), weight(tape, p + ".conv2.bias", resolver), 1, 1);
        Var<T> skip = x;
        if (in_c != out_c)
            skip = nn::conv2d(tape, x, weight(tape, p + ".skip.weight", resolver), weight(tape, p + ".skip.bias", resolver), 1, 0);
        return nn::add(tape, skip, h);
    }

    Var<T> attn_block(Tape<T>* tape, const std::string& p, const Var<T>& x, const Var<T>& ctx,
                      const WeightResolver<T>& resolver) const {
        const int c = static_cast<int>(x->value.dim(1));
        auto n = nn::group_norm(tape, x, weight(tape, p + ".norm.gamma", resolver),
                                weight(tape, p + ".norm.beta", resolver),
                                norm_groups_for(c, config_.norm_groups));
        auto y = nn::attention_core(tape, n, ctx, weight(tape, p + ".q.weight", resolver),
                                    weight(tape, p + ".k.weight", resolver), weight(tape, p + ".v.weight", resolver),
                                    weight(tape, p + ".out.weight", resolver), config_.heads);
        return nn::add(tape, x, y);
    }

    void add_conv(const std::string& p, int out_c, int in_c, int k, uint64_t seed, double stddev = -1.0) {
        const double std_eff = stddev > 0 ? stddev : std::sqrt(2.0 / (in_c * k * k));
        Rng rng(hash64(p + ".weight", seed));
        params_.add(p + ".weight", Tensor<T>::randn({out_c, in_c, k, k}, rng, static_cast<T>(std_eff)));
        params_.add(p + ".bias", Tensor<T>::zeros({out_c}));
    }

    void add_linear(const std::string& p, int out_c, int in_c, uint64_t seed) {
        Rng rng(hash64(p + ".weight", seed));
        params_.add(p + ".weight",
                    Tensor<T>::randn({out_c, in_c}, rng, static_cast<T>(std::sqrt(2.0 / in_c))));
        params_.add(p + ".bias", Tensor<T>::zeros({out_c}));
    }

    void add_norm(const std::string& p, int c) {
        params_.add(p + ".gamma", Tensor<T>::full({c}, T(1)));
        params_.add(p + ".beta", Tensor<T>::zeros({c}));
    }

    void add_attention(const std::string& p, int c, int d, uint64_t seed) {
        add_norm(p + ".norm", c);
        const auto proj = [&](const std::string& n, int rows, int cols) {
            Rng rng(hash64(p + "." + n, seed));
            params_.add(p + "." + n, Tensor<T>::randn({rows, cols}, rng, static_cast<T>(std::sqrt(1.0 / cols))));
        };
        proj("q.weight", c, c);
        proj("k.weight", c, d);
        proj("v.weight", c, d);
        proj("out.weight", c, c);
    }

    void add_res_block(const std::string& p, int in_c, int out_c, uint64_t seed) {
        add_norm(p + ".norm1", in_c);
        add_conv(p + ".conv1", out_c, in_c, 3, seed);
        add_linear(p + ".time_proj", out_c, config_.time_dim, seed);
        add_norm(p + ".norm2", out_c);
        add_conv(p + ".conv2", out_c, out_c, 3, seed);
        if (in_c != out_c) add_conv(p + ".skip", out_c, in_c, 1, seed);
    }

    void build_params(uint64_t seed) {
        const auto& c = config_.block_channels;
        const int levels = config_.levels();
        const int d = config_.embed_dim;

        {
            Rng r0(hash64("cond.char_embed", seed));
            params_.add("cond.char_embed", Tensor<T>::randn({config_.num_characters, d}, r0, T(0.3)));
            Rng r1(hash64("cond.script_embed", seed));
            params_.add("cond.script_embed", Tensor<T>::randn({config_.num_scripts, d}, r1, T(0.3)));
            Rng r2(hash64("cond.style_embed", seed));
            params_.add("cond.style_embed", Tensor<T>::randn({config_.num_styles, d}, r2, T(0.3)));
            Rng r3(hash64("cond.slot_offset", seed));
            params_.add("cond.slot_offset", Tensor<T>::randn({3, d}, r3, T(0.3)));
        }
        add_linear("time.fc1", config_.time_dim, config_.time_sin_dim, seed);
        add_linear("time.fc2", config_.time_dim, config_.time_dim, seed);

        add_conv("unet.conv_in", c[0], 1, 3, seed);
        for (int lvl = 0; lvl < levels; ++lvl) {
            const int in_c = lvl == 0 ? c[0] : c[static_cast<size_t>(lvl - 1)];
            const int out_c = c[static_cast<size_t>(lvl)];
            for (int i = 0; i < config_.layers_per_block; ++i)
                add_res_block("unet.down" + std::to_string(lvl) + ".res" + std::to_string(i),
                              i == 0 ? in_c : out_c, out_c, seed);
            if (config_.attends(lvl)) add_attention("unet.down" + std::to_string(lvl) + ".attn", out_c, d, seed);
            if (lvl + 1 < levels) add_conv("unet.down" + std::to_string(lvl) + ".downsample", out_c, out_c, 3, seed);
        }
        const int mid_c = c.back();
        add_res_block("unet.mid.res1", mid_c, mid_c, seed);
        add_attention("unet.mid.attn", mid_c, d, seed);
        add_res_block("unet.mid.res2", mid_c, mid_c, seed);
        for (int lvl = levels - 1; lvl >= 0; --lvl) {
            const int carried = lvl == levels - 1 ? mid_c : c[static_cast<size_t>(lvl + 1)];
            const int out_c = c[static_cast<size_t>(lvl)];
            for (int i = 0; i < config_.layers_per_block; ++i)
                add_res_block("unet.up" + std::to_string(lvl) + ".res" + std::to_string(i),
                              i == 0 ? carried + out_c : out_c, out_c, seed);
            if (config_.attends(lvl)) add_attention("unet.up" + std::to_string(lvl) + ".attn", out_c, d, seed);
            if (lvl > 0) add_conv("unet.up" + std::to_string(lvl) + ".upsample", out_c, out_c, 3, seed);
        }
        add_norm("unet.out_norm", c[0]);
        add_conv("unet.conv_out", 1, c[0], 3, seed, 0.01);
    }

    ModelConfig config_;
    Vocabularies vocab_;
    ParamStore<T> params_;
};

using NoisePredictor32 = NoisePredictor<float>;
using NoisePredictor64 = NoisePredictor<double>;

}  // namespace glyphdiff
