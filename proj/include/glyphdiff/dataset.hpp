// Copyright (c) 2026 The glyphdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "glyphdiff/condition.hpp"
#include "glyphdiff/digest.hpp"
#include "glyphdiff/font.hpp"
#include "glyphdiff/image.hpp"
#include "glyphdiff/manifest.hpp"
#include "glyphdiff/png_io.hpp"
#include "glyphdiff/random.hpp"
#include "glyphdiff/raster.hpp"

namespace glyphdiff {

struct JitterSpec {
    float max_offset = 2.0f;  // pixels, each axis
    float scale_min = 0.9f;
    float scale_max = 1.1f;
};

/// Recipe for rendering one font into labeled glyph images. A (script,
/// style) pair names the font's role in the surrogate corpus.
struct RenderSpec {
    std::string font_source;
    std::vector<std::string> charset;  // one codepoint per entry
    int image_size = 32;
    std::string script_label;
    std::string style_label;
    JitterSpec jitter;
    float glyph_frac = 0.78f;  // em-to-image scale before jitter
    uint64_t seed = 0;
};

/// Validates that every charset member maps to a non-blank outline.
/// Returns the offending labels (empty means all good).
inline std::vector<std::string> missing_glyphs(const Font& font, const RenderSpec& spec) {
    std::vector<std::string> missing;
    for (const auto& label : spec.charset) {
        const auto cps = utf8_codepoints(label);
        if (cps.size() != 1) {
            missing.push_back(label + " (not a single codepoint)");
            continue;
        }
        if (!font.has_glyph(cps[0])) {
            missing.push_back(label);
            continue;
        }
        if (font.glyph_outline(cps[0]).empty()) missing.push_back(label + " (blank glyph)");
    }
    return missing;
}

/// Deterministic render of one jittered sample: dark glyph on light
/// ground, bbox-centered, normalized to [-1,1]. The jitter draw depends
/// only on (labels, character, sample_index, spec seed), so the same
/// arguments always give bit-identical pixels.
inline GlyphImage render_glyph(const Font& font, const RenderSpec& spec, const std::string& character,
                               int sample_index) {
    if (std::find(spec.charset.begin(), spec.charset.end(), character) == spec.charset.end())
        throw DataError("character '" + character + "' is not in the render charset");
    const auto cps = utf8_codepoints(character);
    if (cps.size() != 1) throw DataError("character label must be a single codepoint: '" + character + "'");
    const GlyphOutline outline = font.glyph_outline(cps[0]);
    if (outline.empty()) throw DataError("blank glyph for '" + character + "'");

    Rng rng(hash64(spec.script_label + "\x1f" + spec.style_label + "\x1f" + character + "\x1f" +
                       std::to_string(sample_index),
                   spec.seed));
    const float jitter_scale =
        spec.jitter.scale_min + static_cast<float>(rng.uniform()) * (spec.jitter.scale_max - spec.jitter.scale_min);
    const float jx = (2.0f * static_cast<float>(rng.uniform()) - 1.0f) * spec.jitter.max_offset;
    const float jy = (2.0f * static_cast<float>(rng.uniform()) - 1.0f) * spec.jitter.max_offset;

    const int size = spec.image_size;
    const float scale = spec.glyph_frac * static_cast<float>(size) / static_cast<float>(font.units_per_em()) *
                        jitter_scale;
    float min_x, min_y, max_x, max_y;
    outline.bounds(min_x, min_y, max_x, max_y);
    const float cx = 0.5f * (min_x + max_x);
    const float cy = 0.5f * (min_y + max_y);
    // Solve offset so the bbox center lands at the image center (+ jitter).
    const float offset_x = 0.5f * static_cast<float>(size) + jx - cx * scale;
    // Pixel y flips inside the rasterizer; aim the center accordingly.
    const float offset_y = 0.5f * static_cast<float>(size) - jy - cy * scale;

    const std::vector<float> cov = rasterize_outline(outline, size, size, scale, offset_x, offset_y);
    GlyphImage img(size, size);
    for (size_t i = 0; i < cov.size(); ++i) img.values[i] = 1.0f - 2.0f * cov[i];
    return img;
}

namespace datasetdetail {

inline std::string sanitize_for_path(const std::string& label) {
    std::string out;
    for (unsigned char c : label) {
        if (std::isalnum(c) || c == '-' || c == '_')
            out.push_back(static_cast<char>(c));
        else {
            static const char* d = "0123456789abcdef";
            out.push_back('x');
            out.push_back(d[c >> 4]);
            out.push_back(d[c & 0xf]);
        }
    }
    return out;
}

inline std::string codepoint_hex(const std::string& character) {
    const auto cps = utf8_codepoints(character);
    std::ostringstream os;
    os << std::hex << cps.at(0);
    return os.str();
}

}  // namespace datasetdetail

/// Renders samples_per_pair jittered images for every (spec, character)
/// pair into out_dir/images and returns the manifest (also written as
/// manifest.jsonl when write_manifest_file is set).
inline DatasetManifest build_corpus(const std::vector<RenderSpec>& specs, int samples_per_pair,
                                    const std::string& out_dir, bool write_manifest_file = true) {
    if (samples_per_pair < 1) throw UsageError("build_corpus: samples_per_pair must be >= 1");
    if (specs.empty()) throw UsageError("build_corpus: no render specs");
    std::filesystem::create_directories(std::filesystem::path(out_dir) / "images");

    // Validate everything up front so failures name all absent glyphs.
    std::vector<Font> fonts;
    fonts.reserve(specs.size());
    std::string missing_report;
    for (const auto& spec : specs) {
        fonts.push_back(Font::load(spec.font_source));
        const auto missing = missing_glyphs(fonts.back(), spec);
        for (const auto& m : missing)
            missing_report += "\n  " + spec.font_source + ": " + m;
    }
    if (!missing_report.empty()) throw DataError("charset members without usable glyphs:" + missing_report);

    DatasetManifest manifest;
    manifest.base_dir = out_dir;
    std::set<std::string> seen_paths;
    for (size_t si = 0; si < specs.size(); ++si) {
        const RenderSpec& spec = specs[si];
        const Font& font = fonts[si];
        for (const auto& character : spec.charset) {
            for (int k = 0; k < samples_per_pair; ++k) {
                const GlyphImage img = render_glyph(font, spec, character, k);
                std::ostringstream name;
                name << "images/" << datasetdetail::sanitize_for_path(spec.script_label) << "__"
                     << datasetdetail::sanitize_for_path(spec.style_label) << "__u"
                     << datasetdetail::codepoint_hex(character) << "_" << std::setw(2) << std::setfill('0')
                     << k << ".png";
                const std::string rel = name.str();
                if (!seen_paths.insert(rel).second) throw DataError("duplicate output path: " + rel);
                write_glyph_png((std::filesystem::path(out_dir) / rel).string(), img);
                manifest.records.push_back({rel, character, spec.script_label, spec.style_label});
            }
        }
    }
    if (write_manifest_file) write_manifest(manifest, (std::filesystem::path(out_dir) / "manifest.jsonl").string());
    return manifest;
}

/// Keeps only characters with strictly more than min_samples records.
inline DatasetManifest threshold_filter(const DatasetManifest& manifest, int min_samples) {
    if (min_samples < 0) throw UsageError("threshold_filter: min_samples must be >= 0");
    const auto counts = manifest.counts_by_character();
    DatasetManifest out;
    out.base_dir = manifest.base_dir;
    for (const auto& r : manifest.records)
        if (counts.at(r.character) > min_samples) out.records.push_back(r);
    return out;
}

struct SplitResult {
    DatasetManifest train;
    DatasetManifest test;
    std::vector<std::string> singleton_strata;  // (character|script) keys forced into train
    std::string assignment_digest;
};

/// Deterministic stratified split by (character, script): every stratum
/// contributes at least one training record; single-record strata go to
/// train and are reported, not rejected.
inline SplitResult split(const DatasetManifest& manifest, double train_frac, uint64_t seed) {
    if (!(train_frac > 0.0 && train_frac < 1.0)) throw UsageError("split: train_frac must be in (0,1)");
    std::map<std::string, std::vector<size_t>> strata;
    for (size_t i = 0; i < manifest.records.size(); ++i) {
        const auto& r = manifest.records[i];
        strata[r.character + "\x1f" + r.script].push_back(i);
    }
    SplitResult out;
    out.train.base_dir = manifest.base_dir;
    out.test.base_dir = manifest.base_dir;
    std::vector<char> is_train(manifest.records.size(), 0);
    for (auto& [key, idxs] : strata) {
        Rng rng(hash64(key, hash_mix(seed, 0x5354524154u)));
        rng.shuffle(idxs);
        const auto n = idxs.size();
        size_t n_train = static_cast<size_t>(std::llround(train_frac * static_cast<double>(n)));
        n_train = std::clamp<size_t>(n_train, 1, n);
        if (n == 1) {
            std::string pretty = key;
            std::replace(pretty.begin(), pretty.end(), '\x1f', '|');
            out.singleton_strata.push_back(pretty);
        }
        for (size_t j = 0; j < n; ++j) is_train[idxs[j]] = j < n_train ? 1 : 0;
    }
    for (size_t i = 0; i < manifest.records.size(); ++i) {
        if (is_train[i])
            out.train.records.push_back(manifest.records[i]);
        else
            out.test.records.push_back(manifest.records[i]);
    }
    Sha256 digest;
    for (size_t i = 0; i < manifest.records.size(); ++i) {
        digest.update(manifest.records[i].image_path);
        digest.update(is_train[i] ? "\x01" : "\x00", 1);
    }
    out.assignment_digest = digest.finish_hex();
    return out;
}

inline void write_split_report(const SplitResult& s, uint64_t seed, double train_frac,
                               const std::string& path) {
    nlohmann::json j{{"seed", seed},
                     {"train_fraction", train_frac},
                     {"train_count", s.train.size()},
                     {"test_count", s.test.size()},
                     {"singleton_strata", s.singleton_strata},
                     {"assignment_digest", s.assignment_digest}};
    std::ofstream out(path);
    if (!out) throw DataError("cannot write split report: " + path);
    out << j.dump(2) << '\n';
}

/// Dataset spec file: image size, charset, jitter, samples per pair,
/// threshold and the font list with its surrogate (script, style) labels.
struct DatasetSpec {
    std::vector<RenderSpec> specs;
    int samples_per_pair = 12;
    int min_samples = 10;
    double train_fraction = 0.9;
};

inline DatasetSpec parse_dataset_spec(const std::string& path, uint64_t seed) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read dataset spec: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad dataset spec " + path + ": " + e.what());
    }
    DatasetSpec out;
    out.samples_per_pair = j.value("samples_per_pair", 12);
    out.min_samples = j.value("min_samples", 10);
    out.train_fraction = j.value("train_fraction", 0.9);
    const int image_size = j.value("image_size", 32);
    if (image_size < 4 || (image_size & (image_size - 1)) != 0)
        throw DataError("dataset spec: image_size must be a power of two (got " +
                        std::to_string(image_size) + ")");
    const float glyph_frac = j.value("glyph_frac", 0.78f);
    JitterSpec jitter;
    if (j.contains("jitter")) {
        jitter.max_offset = j["jitter"].value("max_offset", 2.0f);
        jitter.scale_min = j["jitter"].value("scale_min", 0.9f);
        jitter.scale_max = j["jitter"].value("scale_max", 1.1f);
    }
    std::vector<std::string> default_charset;
    if (j.contains("charset")) {
        for (uint32_t cp : utf8_codepoints(j.at("charset").get<std::string>()))
            default_charset.push_back(utf8_encode(cp));
    }
    if (!j.contains("fonts") || !j["fonts"].is_array() || j["fonts"].empty())
        throw DataError("dataset spec needs a non-empty fonts array");
    for (const auto& f : j["fonts"]) {
        RenderSpec spec;
        spec.font_source = f.at("path").get<std::string>();
        spec.script_label = f.at("script").get<std::string>();
        spec.style_label = f.at("style").get<std::string>();
        spec.image_size = image_size;
        spec.glyph_frac = glyph_frac;
        spec.jitter = jitter;
        spec.seed = seed;
        if (f.contains("charset")) {
            for (uint32_t cp : utf8_codepoints(f.at("charset").get<std::string>()))
                spec.charset.push_back(utf8_encode(cp));
        } else {
            spec.charset = default_charset;
        }
        if (spec.charset.empty()) throw DataError("dataset spec: empty charset for " + spec.font_source);
        if (spec.script_label.empty() || spec.style_label.empty())
            throw DataError("dataset spec: empty script/style label for " + spec.font_source);
        out.specs.push_back(std::move(spec));
    }
    return out;
}

/// Loads every manifest image into memory alongside its condition.
inline std::vector<std::pair<GlyphImage, Condition>> load_dataset_images(const DatasetManifest& manifest) {
    std::vector<std::pair<GlyphImage, Condition>> out;
    out.reserve(manifest.size());
    for (const auto& r : manifest.records) {
        Condition cond;
        cond.character = r.character;
        cond.script = r.script;
        cond.style = r.style;
        out.emplace_back(read_glyph_png(manifest.resolve(r.image_path)), std::move(cond));
    }
    return out;
}

}  // namespace glyphdiff
