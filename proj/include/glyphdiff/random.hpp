// Copyright (c) 2026 The glyphdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "glyphdiff/errors.hpp"

namespace glyphdiff {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// FNV-1a over bytes, then one splitmix round. Used to derive stable
/// sub-seeds from (seed, label) pairs, e.g. per-parameter init streams.
inline uint64_t hash64(std::string_view bytes, uint64_t seed = 0) {
    uint64_t h = 0xcbf29ce484222325ULL ^ seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return splitmix64(h);
}

inline uint64_t hash_mix(uint64_t a, uint64_t b) {
    uint64_t s = a ^ (b * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
    return splitmix64(s);
}

/// Seedable, serializable random source (xoshiro256++ core, Box-Muller
/// gaussians with a cached spare). Every stochastic operation in the
/// library takes one of these explicitly; same seed, same stream,
/// bit-identical results. Not thread-safe: one instance per thread.
class Rng {
public:
    Rng() : Rng(0) {}
    explicit Rng(uint64_t seed) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& w : state_) w = splitmix64(sm);
        has_spare_ = false;
        spare_ = 0.0;
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [lo, hi], both inclusive.
    int uniform_int(int lo, int hi) {
        if (hi < lo) throw UsageError("uniform_int: empty range");
        const uint64_t span = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
        const auto wide = static_cast<unsigned __int128>(next_u64()) * span;
        return lo + static_cast<int>(static_cast<uint64_t>(wide >> 64));
    }

    /// Standard normal draw.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log1p(-u1));  // log(1-u1), never log(0)
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    float gaussian_f() { return static_cast<float>(gaussian()); }

    /// Fisher-Yates using this stream.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(uniform_int(0, static_cast<int>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Derive an independent child stream; does not disturb this one.
    Rng fork(uint64_t salt) const {
        Rng child;
        child.state_ = state_;
        uint64_t sm = hash_mix(state_[0] ^ state_[3], salt);
        for (auto& w : child.state_) w ^= splitmix64(sm);
        child.has_spare_ = false;
        child.spare_ = 0.0;
        return child;
    }

    nlohmann::json state_json() const {
        uint64_t spare_bits = 0;
        std::memcpy(&spare_bits, &spare_, sizeof spare_bits);
        return nlohmann::json{{"s0", state_[0]}, {"s1", state_[1]}, {"s2", state_[2]},
                              {"s3", state_[3]}, {"spare", spare_bits},
                              {"has_spare", has_spare_}};
    }

    static Rng from_json(const nlohmann::json& j) {
        Rng r;
        r.state_ = {j.at("s0").get<uint64_t>(), j.at("s1").get<uint64_t>(),
                    j.at("s2").get<uint64_t>(), j.at("s3").get<uint64_t>()};
        const uint64_t spare_bits = j.at("spare").get<uint64_t>();
        std::memcpy(&r.spare_, &spare_bits, sizeof r.spare_);
        r.has_spare_ = j.at("has_spare").get<bool>();
        return r;
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::array<uint64_t, 4> state_{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Uniform timestep draw in [1, num_steps], the t of the training objective.
inline int sample_timestep(Rng& rng, int num_steps) {
    if (num_steps < 1) throw UsageError("sample_timestep: num_steps must be >= 1");
    return rng.uniform_int(1, num_steps);
}

}  // namespace glyphdiff
