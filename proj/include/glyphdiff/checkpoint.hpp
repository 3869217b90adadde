// Copyright (c) 2026 The glyphdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "glyphdiff/digest.hpp"
#include "glyphdiff/errors.hpp"
#include "glyphdiff/schedule.hpp"
#include "glyphdiff/unet.hpp"

// Checkpoint layout: a directory holding meta.json (model config,
// vocabularies, schedule parameters) plus one raw little-endian float32
// file per parameter, named by the parameter's dotted path. Round-trips
// are bit-exact. Optimizer state for resumable training lives under
// optimizer/ and does not affect the parameter files.

namespace glyphdiff {

static_assert(std::endian::native == std::endian::little, "raw tensor files assume a little-endian host");

inline void write_tensor_f32(const std::string& path, const Tensor32& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write tensor file: " + path);
    out.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!out) throw DataError("short write: " + path);
}

inline Tensor32 read_tensor_f32(const std::string& path, Shape shape) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw DataError("cannot read tensor file: " + path);
    const auto bytes = static_cast<int64_t>(in.tellg());
    const int64_t expected = shape_numel(shape) * static_cast<int64_t>(sizeof(float));
    if (bytes != expected)
        throw DataError("tensor file " + path + " has " + std::to_string(bytes) + " bytes, expected " +
                        std::to_string(expected));
    Tensor32 t(std::move(shape));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(t.ptr()), expected);
    if (!in) throw DataError("short read: " + path);
    return t;
}

inline void save_checkpoint(const std::string& dir, const NoisePredictor32& model, const ScheduleSpec& sched) {
    std::filesystem::create_directories(dir);
    nlohmann::json meta{{"format", "glyphdiff-checkpoint-v1"},
                        {"model", model.config().to_json()},
                        {"vocab", model.vocab().to_json()},
                        {"schedule",
                         {{"num_steps", sched.num_steps},
                          {"beta_start", sched.beta_start},
                          {"beta_end", sched.beta_end}}}};
    {
        std::ofstream out(std::filesystem::path(dir) / "meta.json");
        if (!out) throw DataError("cannot write checkpoint meta: " + dir);
        out << meta.dump(2) << '\n';
    }
    for (const auto& [name, var] : model.params())
        write_tensor_f32((std::filesystem::path(dir) / name).string(), var->value);
}

struct LoadedCheckpoint {
    ModelConfig config;
    Vocabularies vocab;
    ScheduleSpec schedule;
    NoisePredictor32 model;
};

inline nlohmann::json read_checkpoint_meta(const std::string& dir) {
    const auto meta_path = std::filesystem::path(dir) / "meta.json";
    std::ifstream in(meta_path);
    if (!in) throw DataError("not a checkpoint directory (no meta.json): " + dir);
    nlohmann::json meta;
    try {
        in >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad checkpoint meta in " + dir + ": " + e.what());
    }
    if (meta.value("format", "") != "glyphdiff-checkpoint-v1")
        throw DataError("unsupported checkpoint format in " + dir);
    return meta;
}

inline LoadedCheckpoint load_checkpoint(const std::string& dir) {
    const nlohmann::json meta = read_checkpoint_meta(dir);
    ModelConfig config = ModelConfig::from_json(meta.at("model"));
    Vocabularies vocab = Vocabularies::from_json(meta.at("vocab"));
    ScheduleSpec sched;
    sched.num_steps = meta.at("schedule").at("num_steps").get<int>();
    sched.beta_start = meta.at("schedule").at("beta_start").get<double>();
    sched.beta_end = meta.at("schedule").at("beta_end").get<double>();

    // A throwaway instance supplies the parameter name/shape inventory.
    NoisePredictor32 ref(config, vocab, 0);
    std::map<std::string, Tensor32> tensors;
    for (const auto& name : ref.params().names())
        tensors[name] = read_tensor_f32((std::filesystem::path(dir) / name).string(),
                                        ref.params().at(name)->value.shape);
    NoisePredictor32 model(config, vocab, std::move(tensors));
    return LoadedCheckpoint{std::move(config), std::move(vocab), sched, std::move(model)};
}

/// Content digest over meta.json and every parameter file, stable across
/// reruns. Recorded in sample sidecars as the model identity.
inline std::string checkpoint_digest(const std::string& dir) {
    const nlohmann::json meta = read_checkpoint_meta(dir);
    std::map<std::string, std::string> hashes;
    hashes["meta.json"] = sha256_file((std::filesystem::path(dir) / "meta.json").string());
    NoisePredictor32 ref(ModelConfig::from_json(meta.at("model")), Vocabularies::from_json(meta.at("vocab")), 0);
    for (const auto& name : ref.params().names())
        hashes[name] = sha256_file((std::filesystem::path(dir) / name).string());
    return combined_digest(hashes);
}

/// In-memory digest of a parameter set (frozen-base verification).
template <typename T>
inline std::string params_digest(const ParamStore<T>& params) {
    std::map<std::string, std::string> hashes;
    for (const auto& [name, var] : params)
        hashes[name] = sha256_hex(var->value.ptr(), static_cast<size_t>(var->value.numel()) * sizeof(T));
    return combined_digest(hashes);
}

}  // namespace glyphdiff
