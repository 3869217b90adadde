// Copyright (c) 2026 The glyphdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "glyphdiff/digest.hpp"
#include "glyphdiff/random.hpp"
#include "glyphdiff/tensor.hpp"

using namespace glyphdiff;

TEST(Rng, SameSeedSameStream) {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) {
        ASSERT_EQ(a.next_u64(), b.next_u64());
    }
    Rng c(42), d(43);
    EXPECT_NE(c.next_u64(), d.next_u64());
}

TEST(Rng, SerializationResumesMidStream) {
    Rng a(7);
    // Consume an odd number of gaussians so the Box-Muller spare is cached.
    for (int i = 0; i < 7; ++i) a.gaussian();
    Rng b = Rng::from_json(a.state_json());
    for (int i = 0; i < 100; ++i) {
        ASSERT_EQ(a.gaussian(), b.gaussian());
        ASSERT_EQ(a.next_u64(), b.next_u64());
    }
}

TEST(Rng, UniformIntBoundsAndDeterminism) {
    Rng rng(1);
    for (int i = 0; i < 10000; ++i) {
        const int v = rng.uniform_int(3, 9);
        ASSERT_GE(v, 3);
        ASSERT_LE(v, 9);
    }
    EXPECT_EQ(rng.uniform_int(5, 5), 5);
    EXPECT_THROW(rng.uniform_int(2, 1), UsageError);
}

TEST(Rng, GaussianMoments) {
    Rng rng(11);
    const int n = 200000;
    double sum = 0, sq = 0;
    for (int i = 0; i < n; ++i) {
        const double g = rng.gaussian();
        sum += g;
        sq += g * g;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    EXPECT_NEAR(mean, 0.0, 4.0 / std::sqrt(static_cast<double>(n)));
    EXPECT_NEAR(var, 1.0, 4.0 * std::sqrt(2.0 / n));
}

TEST(Rng, ForkIndependentOfParentConsumption) {
    Rng a(3);
    Rng child1 = a.fork(99);
    a.next_u64();
    // Forking depends only on the state at fork time.
    Rng b(3);
    Rng child2 = b.fork(99);
    for (int i = 0; i < 10; ++i) ASSERT_EQ(child1.next_u64(), child2.next_u64());
}

TEST(Hash, StableAndSeedSensitive) {
    EXPECT_EQ(hash64("unet.conv_in.weight"), hash64("unet.conv_in.weight"));
    EXPECT_NE(hash64("a"), hash64("b"));
    EXPECT_NE(hash64("a", 1), hash64("a", 2));
}

namespace {

template <typename T>
void naive_gemm(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0;
            for (int64_t p = 0; p < k; ++p) acc += static_cast<double>(a[i * k + p]) * b[p * n + j];
            c[i * n + j] = static_cast<T>(acc);
        }
}

}  // namespace

TEST(Gemm, MatchesNaiveTripleLoop) {
    Rng rng(5);
    const int64_t m = 7, k = 13, n = 9;
    auto a = Tensor64::randn({m, k}, rng);
    auto b = Tensor64::randn({k, n}, rng);
    Tensor64 c({m, n}), ref({m, n});
    gemm(a.ptr(), b.ptr(), c.ptr(), m, k, n);
    naive_gemm(a.ptr(), b.ptr(), ref.ptr(), m, k, n);
    EXPECT_LT(c.max_abs_diff(ref), 1e-12);

    // gemm_nt: b supplied transposed.
    Tensor64 bt({n, k});
    for (int64_t i = 0; i < k; ++i)
        for (int64_t j = 0; j < n; ++j) bt[j * k + i] = b[i * n + j];
    Tensor64 c2({m, n});
    gemm_nt(a.ptr(), bt.ptr(), c2.ptr(), m, k, n);
    EXPECT_LT(c2.max_abs_diff(ref), 1e-12);

    // gemm_tn: a supplied transposed.
    Tensor64 at({k, m});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < k; ++j) at[j * m + i] = a[i * k + j];
    Tensor64 c3({m, n});
    gemm_tn(at.ptr(), b.ptr(), c3.ptr(), m, k, n);
    EXPECT_LT(c3.max_abs_diff(ref), 1e-12);

    // Accumulate adds on top.
    gemm(a.ptr(), b.ptr(), c.ptr(), m, k, n, true);
    ref.scale_(2.0);
    EXPECT_LT(c.max_abs_diff(ref), 1e-12);
}

TEST(Tensor, ReshapeAndErrors) {
    Tensor32 t({2, 3});
    EXPECT_EQ(t.numel(), 6);
    auto r = t.reshaped({3, 2});
    EXPECT_EQ(r.dim(0), 3);
    EXPECT_THROW(t.reshaped({4, 2}), UsageError);
    EXPECT_THROW(Tensor32({2, 2}, {1.0f, 2.0f}), UsageError);
}

TEST(Tensor, FiniteCheck) {
    Tensor32 t({3});
    EXPECT_TRUE(t.all_finite());
    t[1] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_FALSE(t.all_finite());
    t[1] = std::numeric_limits<float>::infinity();
    EXPECT_FALSE(t.all_finite());
}

TEST(Sha256, KnownVectors) {
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    // Multi-block message (>64 bytes) exercises the block loop.
    EXPECT_EQ(sha256_hex("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq"),
              "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
}

TEST(Sha256, StreamingEqualsOneShot) {
    Sha256 s;
    s.update("hello ");
    s.update("world");
    EXPECT_EQ(s.finish_hex(), sha256_hex("hello world"));
}

TEST(Digest, CombinedOrderIndependent) {
    std::map<std::string, std::string> m1{{"a", "1"}, {"b", "2"}};
    std::map<std::string, std::string> m2{{"b", "2"}, {"a", "1"}};
    EXPECT_EQ(combined_digest(m1), combined_digest(m2));
    m2["a"] = "3";
    EXPECT_NE(combined_digest(m1), combined_digest(m2));
}
