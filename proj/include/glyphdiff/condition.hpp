// Copyright (c) 2026 The glyphdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "glyphdiff/errors.hpp"
#include "glyphdiff/manifest.hpp"
#include "glyphdiff/tensor.hpp"

namespace glyphdiff {

/// Reserved label for an absent script or style slot. Dataset labels may
/// never collide with it; generation with it is the "style-free" path.
inline constexpr const char* kUnspecified = "<unspecified>";

/// Structured generation target: which glyph, in which script, whose style.
/// Character is always concrete; the other two may be kUnspecified.
struct Condition {
    std::string character;
    std::string script = kUnspecified;
    std::string style = kUnspecified;

    std::string prompt_string() const {
        std::string s = character;
        if (script != kUnspecified || style != kUnspecified) s += " " + script;
        if (style != kUnspecified) s += " " + style;
        return s;
    }
};

/// Label <-> id map, labels sorted and deduplicated. When reserve_unspecified
/// is set, id 0 is the UNSPECIFIED token and real labels start at 1.
class Vocabulary {
public:
    Vocabulary() = default;

    static Vocabulary build(const std::set<std::string>& labels, bool reserve_unspecified) {
        Vocabulary v;
        if (reserve_unspecified) v.push(kUnspecified);
        for (const auto& l : labels) {
            if (l == kUnspecified) throw DataError("dataset label collides with the reserved token");
            v.push(l);
        }
        return v;
    }

    static Vocabulary from_labels(const std::vector<std::string>& labels) {
        Vocabulary v;
        for (const auto& l : labels) v.push(l);
        return v;
    }

    int size() const { return static_cast<int>(labels_.size()); }
    const std::vector<std::string>& labels() const { return labels_; }
    const std::string& label(int id) const { return labels_.at(static_cast<size_t>(id)); }

    bool contains(const std::string& label) const { return ids_.count(label) != 0; }

    int id(const std::string& label) const {
        auto it = ids_.find(label);
        if (it == ids_.end()) throw DataError("unknown label: '" + label + "'");
        return it->second;
    }

    /// Appends a genuinely new label (one-shot fine-tuning on a novel
    /// character). Returns the new id.
    int append(const std::string& label) {
        if (contains(label)) throw DataError("label already present: '" + label + "'");
        push(label);
        return size() - 1;
    }

    /// Labels within edit distance 2, for error messages.
    std::vector<std::string> nearest(const std::string& query, size_t max_out = 3) const {
        std::vector<std::pair<int, std::string>> scored;
        for (const auto& l : labels_) {
            if (l == kUnspecified) continue;
            const int d = edit_distance(query, l);
            if (d <= 2) scored.emplace_back(d, l);
        }
        std::sort(scored.begin(), scored.end());
        std::vector<std::string> out;
        for (const auto& [d, l] : scored) {
            out.push_back(l);
            if (out.size() >= max_out) break;
        }
        return out;
    }

private:
    void push(const std::string& label) {
        ids_[label] = static_cast<int>(labels_.size());
        labels_.push_back(label);
    }

    static int edit_distance(const std::string& a, const std::string& b) {
        std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
        for (size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
        for (size_t i = 1; i <= a.size(); ++i) {
            cur[0] = static_cast<int>(i);
            for (size_t j = 1; j <= b.size(); ++j) {
                const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
                cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
            }
            std::swap(prev, cur);
        }
        return prev[b.size()];
    }

    std::vector<std::string> labels_;
    std::map<std::string, int> ids_;
};

struct Vocabularies {
    Vocabulary characters;  // no reserved slot; a character is always given
    Vocabulary scripts;     // id 0 = UNSPECIFIED
    Vocabulary styles;      // id 0 = UNSPECIFIED

    nlohmann::json to_json() const {
        return nlohmann::json{{"characters", characters.labels()},
                              {"scripts", scripts.labels()},
                              {"styles", styles.labels()}};
    }

    static Vocabularies from_json(const nlohmann::json& j) {
        Vocabularies v;
        v.characters = Vocabulary::from_labels(j.at("characters").get<std::vector<std::string>>());
        v.scripts = Vocabulary::from_labels(j.at("scripts").get<std::vector<std::string>>());
        v.styles = Vocabulary::from_labels(j.at("styles").get<std::vector<std::string>>());
        return v;
    }
};

inline Vocabularies build_vocabulary(const DatasetManifest& manifest) {
    if (manifest.empty()) throw DataError("cannot build vocabulary from an empty manifest");
    std::set<std::string> chars, scripts, styles;
    for (const auto& r : manifest.records) {
        chars.insert(r.character);
        scripts.insert(r.script);
        styles.insert(r.style);
    }
    Vocabularies v;
    v.characters = Vocabulary::build(chars, false);
    v.scripts = Vocabulary::build(scripts, true);
    v.styles = Vocabulary::build(styles, true);
    return v;
}

/// Integer form of a Condition under fixed vocabularies.
struct ConditionIds {
    int character = 0;
    int script = 0;
    int style = 0;
};

inline ConditionIds condition_to_ids(const Condition& cond, const Vocabularies& vocab) {
    ConditionIds ids;
    ids.character = vocab.characters.id(cond.character);
    ids.script = vocab.scripts.id(cond.script);
    ids.style = vocab.styles.id(cond.style);
    return ids;
}

/// Token sequence consumed by cross-attention: exactly three vectors, for
/// the character, script and style slots.
struct ConditionEmbedding {
    Tensor32 tokens;  // [3, D]
    int dim() const { return tokens.numel() == 0 ? 0 : static_cast<int>(tokens.dim(1)); }
};

/// Sinusoidal features at geometrically spaced frequencies:
/// [sin(t*f_0), cos(t*f_0), sin(t*f_1), cos(t*f_1), ...], f_0 = 1.
/// Injective over [1, num_steps] for dim >= 2.
template <typename T>
inline Tensor<T> timestep_embedding(int t, int dim, int num_steps) {
    if (t < 1 || t > num_steps)
        throw UsageError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(num_steps) + "]");
    if (dim < 2 || dim % 2 != 0) throw UsageError("timestep_embedding: dim must be even and >= 2");
    Tensor<T> out({dim});
    const int half = dim / 2;
    for (int j = 0; j < half; ++j) {
        const double freq = std::pow(10000.0, -2.0 * j / dim);
        out[2 * j] = static_cast<T>(std::sin(t * freq));
        out[2 * j + 1] = static_cast<T>(std::cos(t * freq));
    }
    return out;
}

/// Optional import path for externally computed condition embeddings: a
/// JSON file of 3xD token blocks keyed by the prompt string. Lets a frozen
/// external text encoder stand in for the trainable tables.
inline std::map<std::string, Tensor32> load_condition_embeddings(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read embedding file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad embedding file " + path + ": " + e.what());
    }
    const int dim = j.at("dim").get<int>();
    std::map<std::string, Tensor32> out;
    for (const auto& [key, block] : j.at("embeddings").items()) {
        if (!block.is_array() || block.size() != 3)
            throw DataError("embedding block for '" + key + "' must have 3 token vectors");
        Tensor32 tokens({3, dim});
        for (int s = 0; s < 3; ++s) {
            const auto& row = block[static_cast<size_t>(s)];
            if (static_cast<int>(row.size()) != dim)
                throw DataError("embedding row for '" + key + "' has wrong dimension");
            for (int d = 0; d < dim; ++d) tokens[s * dim + d] = row[static_cast<size_t>(d)].get<float>();
        }
        out[key] = std::move(tokens);
    }
    return out;
}

}  // namespace glyphdiff
