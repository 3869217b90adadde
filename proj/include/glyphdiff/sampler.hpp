// Copyright (c) 2026 The glyphdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "glyphdiff/condition.hpp"
#include "glyphdiff/diffusion.hpp"
#include "glyphdiff/font.hpp"
#include "glyphdiff/image.hpp"
#include "glyphdiff/unet.hpp"

namespace glyphdiff {

struct SampleRequest {
    std::vector<Condition> conditions;
    uint64_t seed = 0;
    int columns = 0;  // 0: one row
};

/// Runs full ancestral chains for a batch of conditions in lockstep. Each
/// sample owns its random stream seeded from seeds[i], so a batched run is
/// bit-identical to generating the same condition alone with that seed.
template <typename Model>
inline std::vector<GlyphImage> generate_batch(const Model& model, const std::vector<Condition>& conds,
                                              const NoiseSchedule& sched, const std::vector<uint64_t>& seeds) {
    if (conds.empty()) throw UsageError("generate_batch: no conditions");
    if (conds.size() != seeds.size()) throw UsageError("generate_batch: need one seed per condition");
    const ModelConfig& cfg = model.config();
    const int64_t B = static_cast<int64_t>(conds.size());
    const int64_t hw = static_cast<int64_t>(cfg.image_size) * cfg.image_size;

    std::vector<ConditionIds> ids(conds.size());
    for (size_t i = 0; i < conds.size(); ++i) ids[i] = condition_to_ids(conds[i], model.vocab());
    auto ctx = model.embed_conditions(nullptr, ids);

    std::vector<Rng> rngs;
    rngs.reserve(conds.size());
    for (uint64_t s : seeds) rngs.emplace_back(s);

    Tensor32 x({B, 1, cfg.image_size, cfg.image_size});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < hw; ++i) x[b * hw + i] = rngs[static_cast<size_t>(b)].gaussian_f();

    for (int t = sched.num_steps; t >= 1; --t) {
        auto out = model.forward(nullptr, constant(x.template cast<float>()), std::vector<int>(conds.size(), t), ctx);
        if (!out->value.all_finite())
            throw NumericError("generate: non-finite prediction at t=" + std::to_string(t));
        const double beta = sched.beta(t);
        const float inv_sqrt_alpha = static_cast<float>(1.0 / std::sqrt(sched.alpha(t)));
        const float eps_coef = static_cast<float>(beta / std::sqrt(1.0 - sched.alpha_bar(t)));
        const float sigma = t > 1 ? static_cast<float>(std::sqrt(beta)) : 0.0f;
        for (int64_t b = 0; b < B; ++b) {
            for (int64_t i = 0; i < hw; ++i) {
                const float mean = inv_sqrt_alpha * (x[b * hw + i] - eps_coef * out->value[b * hw + i]);
                x[b * hw + i] = t > 1 ? mean + sigma * rngs[static_cast<size_t>(b)].gaussian_f() : mean;
            }
        }
    }

    std::vector<GlyphImage> images;
    images.reserve(conds.size());
    for (int64_t b = 0; b < B; ++b) {
        GlyphImage img(cfg.image_size, cfg.image_size);
        std::copy(x.data.begin() + b * hw, x.data.begin() + (b + 1) * hw, img.values.begin());
        clamp_unit_(img);
        images.push_back(std::move(img));
    }
    return images;
}

/// One condition, one seed, one image: the full reverse chain from pure
/// noise, clamped to [-1,1] at the end.
template <typename Model>
inline GlyphImage generate(const Model& model, const Condition& cond, const NoiseSchedule& sched,
                           uint64_t seed) {
    return generate_batch(model, {cond}, sched, {seed})[0];
}

/// Character-only or script-only generation: the style slot is the
/// UNSPECIFIED token the model saw under condition dropout.
template <typename Model>
inline GlyphImage style_free(const Model& model, const std::string& character, const std::string& script,
                             const NoiseSchedule& sched, uint64_t seed) {
    Condition cond;
    cond.character = character;
    cond.script = script;
    cond.style = kUnspecified;
    return generate(model, cond, sched, seed);
}

/// Renders a text string one character per cell (seeds seed, seed+1, ...)
/// and composes the cells left-to-right into a grid image.
template <typename Model>
inline GlyphImage generate_string(const Model& model, const std::string& text, const std::string& script,
                                  const std::string& style, const NoiseSchedule& sched, uint64_t seed,
                                  int columns = 0, int pad = 2) {
    const auto cps = utf8_codepoints(text);
    if (cps.empty()) throw UsageError("generate_string: empty text");
    std::vector<Condition> conds;
    std::vector<uint64_t> seeds;
    std::string unknown;
    for (size_t i = 0; i < cps.size(); ++i) {
        Condition c;
        c.character = utf8_encode(cps[i]);
        c.script = script;
        c.style = style;
        if (!model.vocab().characters.contains(c.character)) unknown += " '" + c.character + "'";
        conds.push_back(std::move(c));
        seeds.push_back(seed + i);
    }
    if (!unknown.empty()) throw DataError("characters not in vocabulary:" + unknown);
    const auto cells = generate_batch(model, conds, sched, seeds);
    return compose_grid(cells, columns > 0 ? columns : static_cast<int>(cells.size()), pad);
}

/// Batch sidecar: conditions, seeds and the model identity, so any sample
/// can be traced back and regenerated.
inline nlohmann::json sample_sidecar(const std::vector<Condition>& conds, const std::vector<uint64_t>& seeds,
                                     const std::string& model_digest) {
    nlohmann::json items = nlohmann::json::array();
    for (size_t i = 0; i < conds.size(); ++i) {
        items.push_back(nlohmann::json{{"character", conds[i].character},
                                       {"script", conds[i].script},
                                       {"style", conds[i].style},
                                       {"seed", seeds[i]}});
    }
    return nlohmann::json{{"model_digest", model_digest}, {"samples", items}};
}

}  // namespace glyphdiff
