// Copyright (c) 2026 The glyphdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "glyphdiff/errors.hpp"

namespace glyphdiff {

/// One labeled sample: a rendered glyph image plus its condition labels.
struct ManifestRecord {
    std::string image_path;  // relative to the manifest's directory
    std::string character;
    std::string script;
    std::string style;
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;
    std::string base_dir;  // directory the image paths are relative to

    bool empty() const { return records.empty(); }
    size_t size() const { return records.size(); }

    std::string resolve(const std::string& image_path) const {
        if (image_path.empty()) throw DataError("manifest record has empty image path");
        std::filesystem::path p(image_path);
        if (p.is_absolute()) return image_path;
        return (std::filesystem::path(base_dir) / p).string();
    }

    std::map<std::string, int> counts_by_character() const {
        std::map<std::string, int> counts;
        for (const auto& r : records) ++counts[r.character];
        return counts;
    }

    std::map<std::string, int> counts_by_script() const {
        std::map<std::string, int> counts;
        for (const auto& r : records) ++counts[r.script];
        return counts;
    }

    /// Distinct (script, style) pairs present, sorted.
    std::set<std::pair<std::string, std::string>> script_style_pairs() const {
        std::set<std::pair<std::string, std::string>> pairs;
        for (const auto& r : records) pairs.emplace(r.script, r.style);
        return pairs;
    }
};

/// JSON Lines, one record per line, UTF-8, keys exactly
/// image_path/character/script/style.
inline void write_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write manifest: " + path);
    for (const auto& r : m.records) {
        nlohmann::json j{{"image_path", r.image_path},
                         {"character", r.character},
                         {"script", r.script},
                         {"style", r.style}};
        out << j.dump() << '\n';
    }
}

inline DatasetManifest read_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read manifest: " + path);
    DatasetManifest m;
    m.base_dir = std::filesystem::path(path).parent_path().string();
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": bad manifest line: " + e.what());
        }
        ManifestRecord r;
        r.image_path = j.at("image_path").get<std::string>();
        r.character = j.at("character").get<std::string>();
        r.script = j.at("script").get<std::string>();
        r.style = j.at("style").get<std::string>();
        if (r.character.empty() || r.script.empty() || r.style.empty())
            throw DataError(path + ":" + std::to_string(line_no) + ": empty label");
        m.records.push_back(std::move(r));
    }
    return m;
}

}  // namespace glyphdiff
