#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "lmae/masking.hpp"

using namespace lmae;

namespace {

// Isotropic kernel written out independently of the library.
double kernel_value(int q, int cx, int cy, int i, int j, double r) {
    const double d2 = (i - cx) * (i - cx) + (j - cy) * (j - cy);
    return std::exp(-std::numbers::pi / (r * q * q) * d2 / 2.0);
}

// Central-disk fraction averaged over the 9 equally likely jittered centers.
double central_fraction(int q, double r) {
    double total = 0.0;
    for (int ox = -1; ox <= 1; ++ox) {
        for (int oy = -1; oy <= 1; ++oy) {
            int hits = 0;
            for (int i = 0; i < q; ++i) {
                for (int j = 0; j < q; ++j) {
                    hits += kernel_value(q, q / 2 + ox, q / 2 + oy, i, j, r) >= r ? 1 : 0;
                }
            }
            total += static_cast<double>(hits) / (q * q);
        }
    }
    return total / 9.0;
}

}  // namespace

TEST(Kernel, PeakAtCenterAndMatchesFormula) {
    const auto a = gaussian_kernel(14, {7, 6}, 0.5, KernelVariant::isotropic);
    EXPECT_EQ(a[7 * 14 + 6], 1.0);
    for (int i = 0; i < 14; ++i) {
        for (int j = 0; j < 14; ++j) {
            EXPECT_NEAR(a[i * 14 + j], kernel_value(14, 7, 6, i, j, 0.5), 1e-15);
            EXPECT_LE(a[i * 14 + j], 1.0);
        }
    }
}

TEST(Kernel, RejectsBadArguments) {
    EXPECT_THROW((void)gaussian_kernel(14, {7, 7}, 0.0, KernelVariant::isotropic), std::invalid_argument);
    EXPECT_THROW((void)gaussian_kernel(14, {14, 0}, 0.5, KernelVariant::isotropic), std::invalid_argument);
}

TEST(ProgAware, GradeZeroMasksExactlyTheCentralDisk) {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        GridPoint c;
        const auto vis = prog_aware_mask(14, 0, 0.75, KernelVariant::isotropic, rng, &c);
        EXPECT_LE(std::abs(c.x - 7), 1);
        EXPECT_LE(std::abs(c.y - 7), 1);
        for (int i = 0; i < 14; ++i) {
            for (int j = 0; j < 14; ++j) {
                const bool central = kernel_value(14, c.x, c.y, i, j, 0.75) >= 0.75;
                ASSERT_EQ(vis[i * 14 + j] == 0, central);
            }
        }
    }
}

TEST(ProgAware, ExpectedMaskedFractionGrowsTenPercentPerGrade) {
    const double fc = central_fraction(14, 0.75);
    Rng rng(10);
    for (int s = 0; s <= 4; ++s) {
        double masked = 0.0;
        const int draws = 2000;
        for (int d = 0; d < draws; ++d) {
            const auto vis = prog_aware_mask(14, s, 0.75, KernelVariant::isotropic, rng);
            for (auto v : vis) {
                masked += v == 0 ? 1.0 : 0.0;
            }
        }
        EXPECT_NEAR(masked / (draws * 196.0), fc + (1.0 - fc) * 0.1 * s, 0.01) << "grade " << s;
    }
}

TEST(RandomMask, MasksFloorOfRatioTokens) {
    Rng rng(11);
    for (double ratio : {0.0, 0.25, 0.29, 0.5, 0.75, 0.99}) {
        for (std::size_t frames : {1u, 3u}) {
            const auto m = random_mask(10, frames, ratio, rng);
            EXPECT_EQ(m.masked_count(), static_cast<std::size_t>(std::floor(ratio * 100.0 * frames + 1e-9)));
        }
    }
}

TEST(RandomMask, PerTokenFrequencyMatchesRatio) {
    Rng rng(12);
    std::vector<int> hits(16, 0);
    const int draws = 10000;
    for (int d = 0; d < draws; ++d) {
        const auto m = random_mask(4, 1, 0.5, rng);
        for (std::size_t k = 0; k < 16; ++k) {
            hits[k] += m.visible(k) ? 0 : 1;
        }
    }
    for (int h : hits) {
        EXPECT_NEAR(static_cast<double>(h) / draws, 0.5, 0.02);
    }
}

TEST(VisitMask, HidesExactlyOneWholeFrame) {
    Rng rng(13);
    for (int d = 0; d < 100; ++d) {
        const auto m = visit_mask(4, 3, rng);
        int hidden_frames = 0;
        for (std::size_t f = 0; f < 3; ++f) {
            const auto c = m.masked_count_in_frame(f);
            ASSERT_TRUE(c == 0 || c == 16);
            hidden_frames += c == 16 ? 1 : 0;
        }
        EXPECT_EQ(hidden_frames, 1);
    }
}

TEST(GenerateMask, AlwaysLeavesAVisibleToken) {
    MaskConfig cfg{MaskStrategy::prog_aware, 1.0, KernelVariant::isotropic};
    Rng rng(14);
    const std::vector<int> grades{4, 4};
    for (int d = 0; d < 200; ++d) {
        EXPECT_GT(generate_mask(cfg, 2, grades, rng).visible_count(), 0u);
    }
}

TEST(GenerateMask, RandomLabelsIgnoreTrueGrades) {
    MaskConfig cfg{MaskStrategy::prog_aware_random, 0.75, KernelVariant::isotropic};
    const std::vector<int> a{0, 0, 0};
    const std::vector<int> b{4, 4, 4};
    Rng ra(15), rb(15);
    EXPECT_EQ(generate_mask(cfg, 14, a, ra), generate_mask(cfg, 14, b, rb));
}

TEST(MaskConfig, ValidatesParameterRange) {
    EXPECT_THROW((MaskConfig{MaskStrategy::random, 1.5, KernelVariant::isotropic}.validate()), std::invalid_argument);
    EXPECT_EQ(parse_mask_strategy(to_string(MaskStrategy::prog_aware_random)), MaskStrategy::prog_aware_random);
    EXPECT_ANY_THROW((void)parse_mask_strategy("tube"));
}
