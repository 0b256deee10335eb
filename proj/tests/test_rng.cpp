#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "lmae/rng.hpp"

using lmae::Rng;

TEST(Rng, SameSeedSameStream) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) {
        ASSERT_EQ(a.next_u64(), b.next_u64());
    }
}

TEST(Rng, SubstreamsDependOnNameIdAndParent) {
    const Rng root(7);
    std::set<std::uint64_t> firsts;
    for (const char* name : {"data", "mask", "init", "shuffle"}) {
        firsts.insert(root.substream(name).substream("x").next_u64());
        for (std::uint64_t id = 0; id < 4; ++id) {
            firsts.insert(root.substream(name, id).next_u64());
        }
    }
    firsts.insert(Rng(8).substream("data").substream("x").next_u64());
    EXPECT_EQ(firsts.size(), 4u * 5u + 1u);
}

TEST(Rng, SubstreamDoesNotAdvanceParent) {
    Rng a(3), b(3);
    (void)a.substream("mask", 9);
    EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, UniformMomentsAndRange) {
    Rng rng(1);
    const int n = 200000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        s += u;
        s2 += u * u;
    }
    EXPECT_NEAR(s / n, 0.5, 0.005);
    EXPECT_NEAR(s2 / n - (s / n) * (s / n), 1.0 / 12.0, 0.002);
}

TEST(Rng, BelowCoversRangeUniformly) {
    Rng rng(2);
    std::vector<int> counts(7, 0);
    const int n = 70000;
    for (int i = 0; i < n; ++i) {
        const auto k = rng.below(7);
        ASSERT_LT(k, 7u);
        ++counts[k];
    }
    for (int c : counts) {
        EXPECT_NEAR(c, n / 7, 400);
    }
}

TEST(Rng, NormalAndTruncatedNormal) {
    Rng rng(5);
    const int n = 100000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        s += x;
        s2 += x * x;
    }
    EXPECT_NEAR(s / n, 0.0, 0.02);
    EXPECT_NEAR(s2 / n, 1.0, 0.02);
    for (int i = 0; i < 10000; ++i) {
        const double t = rng.truncated_normal(0.02);
        ASSERT_LE(std::abs(t), 0.04);
    }
}

TEST(Rng, SerializeRestoresState) {
    Rng a(11);
    (void)a.next_u64();
    Rng b = Rng::deserialize(a.serialize());
    for (int i = 0; i < 10; ++i) {
        ASSERT_EQ(a.next_u64(), b.next_u64());
    }
}
