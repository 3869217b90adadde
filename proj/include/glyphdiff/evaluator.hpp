// Copyright (c) 2026 The glyphdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "glyphdiff/classifier.hpp"
#include "glyphdiff/sampler.hpp"

namespace glyphdiff {

/// One scored corpus row (per intended script, plus a Total). Correct
/// counts are kept alongside the ratios so report arithmetic stays exact.
struct AccuracyRow {
    std::string script;
    int64_t n = 0;
    int64_t script_correct = 0;
    int64_t character_correct = 0;

    double script_accuracy() const { return n == 0 ? 0.0 : static_cast<double>(script_correct) / n; }
    double character_accuracy() const { return n == 0 ? 0.0 : static_cast<double>(character_correct) / n; }
};

struct AccuracyReport {
    std::string corpus;  // real / generated-no-style / generated-with-style
    std::vector<AccuracyRow> rows;

    AccuracyRow total() const {
        AccuracyRow t;
        t.script = "Total";
        for (const auto& r : rows) {
            t.n += r.n;
            t.script_correct += r.script_correct;
            t.character_correct += r.character_correct;
        }
        return t;
    }

    nlohmann::json to_json() const {
        nlohmann::json rows_json = nlohmann::json::array();
        auto row_json = [](const AccuracyRow& r) {
            return nlohmann::json{{"script", r.script},
                                  {"n", r.n},
                                  {"script_correct", r.script_correct},
                                  {"character_correct", r.character_correct},
                                  {"script_accuracy", r.script_accuracy()},
                                  {"character_accuracy", r.character_accuracy()}};
        };
        for (const auto& r : rows) rows_json.push_back(row_json(r));
        return nlohmann::json{{"corpus", corpus}, {"rows", rows_json}, {"total", row_json(total())}};
    }
};

using ScoredCorpus = std::vector<std::pair<GlyphImage, Condition>>;

/// Top-1 scoring of a labeled corpus against the classifier, grouped by
/// intended script. Labels must exist in the classifier's vocabularies.
inline AccuracyReport score_corpus(const MultitaskClassifier32& classifier, const ScoredCorpus& corpus,
                                   const std::string& corpus_name) {
    if (corpus.empty()) throw UsageError("score_corpus: empty corpus");
    std::vector<GlyphImage> images;
    images.reserve(corpus.size());
    for (const auto& [img, cond] : corpus) images.push_back(img);
    const auto preds = classifier.predict(images);

    std::map<std::string, AccuracyRow> by_script;
    for (size_t i = 0; i < corpus.size(); ++i) {
        const Condition& cond = corpus[i].second;
        if (!classifier.scripts().contains(cond.script))
            throw DataError("score_corpus: script '" + cond.script + "' unknown to classifier");
        if (!classifier.characters().contains(cond.character))
            throw DataError("score_corpus: character '" + cond.character + "' unknown to classifier");
        AccuracyRow& row = by_script[cond.script];
        row.script = cond.script;
        ++row.n;
        if (preds[i].script_id == classifier.scripts().id(cond.script)) ++row.script_correct;
        if (preds[i].character_id == classifier.characters().id(cond.character)) ++row.character_correct;
    }
    AccuracyReport report;
    report.corpus = corpus_name;
    for (auto& [script, row] : by_script) report.rows.push_back(row);
    return report;
}

/// Mean script-head probability assigned to `script` over a set of images.
/// Works for characters the classifier has never seen; only the script head
/// is consulted.
inline double mean_script_probability(const MultitaskClassifier32& classifier,
                                      const std::vector<GlyphImage>& images, const std::string& script) {
    if (images.empty()) throw UsageError("mean_script_probability: no images");
    const int sid = classifier.scripts().id(script);
    const auto preds = classifier.predict(images);
    double acc = 0.0;
    for (const auto& p : preds) acc += p.script_probs[static_cast<size_t>(sid)];
    return acc / static_cast<double>(preds.size());
}

/// One sample whose character head disagrees with the intended label.
/// Margin is (top logit - intended logit), so larger means a more
/// confident failure.
struct Failure {
    size_t index = 0;
    std::string intended;
    std::string predicted;
    double margin = 0.0;
};

inline std::vector<Failure> failure_census(const MultitaskClassifier32& classifier, const ScoredCorpus& corpus) {
    std::vector<GlyphImage> images;
    images.reserve(corpus.size());
    for (const auto& [img, cond] : corpus) images.push_back(img);
    const auto preds = classifier.predict(images);
    std::vector<Failure> out;
    for (size_t i = 0; i < corpus.size(); ++i) {
        const int intended = classifier.characters().id(corpus[i].second.character);
        if (preds[i].character_id == intended) continue;
        Failure f;
        f.index = i;
        f.intended = corpus[i].second.character;
        f.predicted = classifier.characters().label(preds[i].character_id);
        f.margin = static_cast<double>(preds[i].char_logits[static_cast<size_t>(preds[i].character_id)]) -
                   static_cast<double>(preds[i].char_logits[static_cast<size_t>(intended)]);
        out.push_back(std::move(f));
    }
    std::stable_sort(out.begin(), out.end(), [](const Failure& a, const Failure& b) { return a.margin > b.margin; });
    return out;
}

/// Contact sheet of failing samples (most confident failures first) for
/// manual stroke-level inspection, plus a JSON listing.
inline void save_failure_census(const std::string& dir, const std::string& stem,
                                const std::vector<Failure>& failures, const ScoredCorpus& corpus,
                                int max_cells = 100, int columns = 10) {
    std::filesystem::create_directories(dir);
    nlohmann::json items = nlohmann::json::array();
    for (const auto& f : failures)
        items.push_back(nlohmann::json{{"index", f.index},
                                       {"intended", f.intended},
                                       {"predicted", f.predicted},
                                       {"margin", f.margin}});
    std::ofstream out(std::filesystem::path(dir) / (stem + ".json"));
    out << nlohmann::json{{"failures", items}}.dump(2) << '\n';
    if (!failures.empty()) {
        std::vector<GlyphImage> cells;
        for (const auto& f : failures) {
            cells.push_back(corpus[f.index].first);
            if (static_cast<int>(cells.size()) >= max_cells) break;
        }
        write_glyph_png((std::filesystem::path(dir) / (stem + ".png")).string(),
                        compose_grid(cells, columns));
    }
}

/// Characters ranked by record count (descending), label order breaking
/// ties, truncated to n.
inline std::vector<std::string> most_common_characters(const DatasetManifest& manifest, int n) {
    const auto counts = manifest.counts_by_character();
    std::vector<std::pair<int, std::string>> ranked;
    for (const auto& [label, count] : counts) ranked.emplace_back(-count, label);
    std::sort(ranked.begin(), ranked.end());
    std::vector<std::string> out;
    for (const auto& [neg, label] : ranked) {
        out.push_back(label);
        if (static_cast<int>(out.size()) >= n) break;
    }
    return out;
}

struct EvalProtocol {
    int num_characters = 50;
    uint64_t seed = 0;
    int sample_batch = 32;

    static EvalProtocol from_json(const nlohmann::json& j) {
        EvalProtocol p;
        p.num_characters = j.value("num_characters", p.num_characters);
        p.seed = j.value("seed", p.seed);
        p.sample_batch = j.value("sample_batch", p.sample_batch);
        return p;
    }
};

/// Generates the evaluation corpus for the given conditions in
/// deterministic order with sequential seeds.
template <typename Model>
inline ScoredCorpus generate_protocol_corpus(const Model& model, const NoiseSchedule& sched,
                                             const std::vector<Condition>& conds, uint64_t seed,
                                             int batch = 32) {
    ScoredCorpus corpus;
    corpus.reserve(conds.size());
    size_t base = 0;
    while (base < conds.size()) {
        const size_t n = std::min(static_cast<size_t>(batch), conds.size() - base);
        std::vector<Condition> chunk(conds.begin() + static_cast<long>(base),
                                     conds.begin() + static_cast<long>(base + n));
        std::vector<uint64_t> seeds(n);
        for (size_t i = 0; i < n; ++i) seeds[i] = seed + base + i;
        auto images = generate_batch(model, chunk, sched, seeds);
        for (size_t i = 0; i < n; ++i) corpus.emplace_back(std::move(images[i]), chunk[i]);
        base += n;
    }
    return corpus;
}

/// The evaluation protocol's condition lists: the n most common characters
/// crossed with every script (style-free), and with every observed
/// (script, style) pair (with-style).
inline std::pair<std::vector<Condition>, std::vector<Condition>> protocol_conditions(
    const DatasetManifest& manifest, int num_characters) {
    const auto chars = most_common_characters(manifest, num_characters);
    std::set<std::string> scripts;
    for (const auto& r : manifest.records) scripts.insert(r.script);
    const auto pairs = manifest.script_style_pairs();
    std::vector<Condition> no_style, with_style;
    for (const auto& ch : chars) {
        for (const auto& script : scripts) {
            Condition c;
            c.character = ch;
            c.script = script;
            c.style = kUnspecified;
            no_style.push_back(c);
        }
        for (const auto& [script, style] : pairs) {
            Condition c;
            c.character = ch;
            c.script = script;
            c.style = style;
            with_style.push_back(c);
        }
    }
    return {no_style, with_style};
}

inline void write_reports(const std::vector<AccuracyReport>& reports, const std::string& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : reports) j.push_back(r.to_json());
    {
        std::ofstream out(std::filesystem::path(dir) / "report.json");
        if (!out) throw DataError("cannot write report.json in " + dir);
        out << nlohmann::json{{"reports", j}}.dump(2) << '\n';
    }
    std::ofstream md(std::filesystem::path(dir) / "report.md");
    if (!md) throw DataError("cannot write report.md in " + dir);
    md << "# Accuracy report\n";
    for (const auto& r : reports) {
        md << "\n## " << r.corpus << "\n\n";
        md << "| Script | n | Script accuracy | Character accuracy |\n";
        md << "|---|---|---|---|\n";
        char buf[128];
        for (const auto& row : r.rows) {
            std::snprintf(buf, sizeof buf, "| %s | %lld | %.3f | %.3f |\n", row.script.c_str(),
                          static_cast<long long>(row.n), row.script_accuracy(), row.character_accuracy());
            md << buf;
        }
        const AccuracyRow t = r.total();
        std::snprintf(buf, sizeof buf, "| **Total** | %lld | %.3f | %.3f |\n",
                      static_cast<long long>(t.n), t.script_accuracy(), t.character_accuracy());
        md << buf;
    }
}

}  // namespace glyphdiff
