#include <gtest/gtest.h>

#include <vector>

#include "lmae/ops.hpp"
#include "lmae/vivit.hpp"

using namespace lmae;

namespace {

Tensor<double> random_tokens(Rng& rng, std::size_t n, std::size_t d) {
    std::vector<double> v(n * d);
    for (auto& x : v) {
        x = rng.uniform(-1.0, 1.0);
    }
    return Tensor<double>::from_data({n, d}, std::move(v));
}

}  // namespace

TEST(TransformerConfig, Validation) {
    EXPECT_NO_THROW((TransformerConfig{2, 4, 64, 128}.validate()));
    EXPECT_THROW((TransformerConfig{2, 3, 64, 128}.validate()), std::invalid_argument);
    EXPECT_THROW((TransformerConfig{0, 4, 64, 128}.validate()), std::invalid_argument);
    EXPECT_EQ((TransformerConfig{2, 4, 64, 128}.head_dim()), 16u);
}

TEST(TransformerEncoder, ShapePreservedAndAttentionRowsNormalized) {
    ParameterSet<double> params;
    Rng rng(1);
    TransformerEncoder<double> enc(params, "enc.", {2, 2, 8, 16}, rng);
    auto x = random_tokens(rng, 5, 8);
    std::vector<Tensor<double>> probs;
    EncoderOptions<double> opts;
    opts.attention_probs = &probs;
    auto y = enc.forward(x, opts);
    EXPECT_EQ(y.shape(), (Shape{5, 8}));
    ASSERT_EQ(probs.size(), 2u);
    for (const auto& p : probs) {
        ASSERT_EQ(p.shape(), (Shape{2, 5, 5}));
        for (std::size_t row = 0; row < 10; ++row) {
            double s = 0.0;
            for (std::size_t j = 0; j < 5; ++j) {
                s += p.data()[row * 5 + j];
            }
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}

TEST(TransformerEncoder, PermutationEquivariant) {
    // Without positional terms joint attention has no notion of order.
    ParameterSet<double> params;
    Rng rng(2);
    TransformerEncoder<double> enc(params, "enc.", {2, 2, 8, 16}, rng);
    auto x = random_tokens(rng, 6, 8);
    const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    auto y = enc.forward(x);
    auto yp = enc.forward(gather_rows(x, std::span<const std::size_t>(perm)));
    for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t j = 0; j < 8; ++j) {
            EXPECT_NEAR(yp.data()[i * 8 + j], y.data()[perm[i] * 8 + j], 1e-12);
        }
    }
}

TEST(TransformerEncoder, ParameterNamesAndCount) {
    ParameterSet<double> params;
    Rng rng(3);
    TransformerEncoder<double> enc(params, "enc.", {2, 2, 8, 16}, rng);
    EXPECT_NE(params.find("enc.blocks.1.attn.q.weight"), nullptr);
    EXPECT_NE(params.find("enc.norm.bias"), nullptr);
    // per block: 2 LN (2*8 each) + 4 attn linears (8*8+8) + fc1 (8*16+16) + fc2 (16*8+8); final LN 2*8
    const std::size_t block = 2 * 16 + 4 * 72 + 144 + 136;
    EXPECT_EQ(params.scalar_count("enc."), 2 * block + 16);
}

TEST(TransformerEncoder, SelfOnlyAttentionIsIdentityOnValues) {
    ParameterSet<double> params;
    Rng rng(4);
    TransformerEncoder<double> enc(params, "enc.", {1, 2, 8, 16}, rng);
    auto a = random_tokens(rng, 4, 8);
    auto b = random_tokens(rng, 4, 8);
    // With self-only attention, token 0's output depends only on token 0.
    auto rows_b = b.data();
    std::vector<double> mixed(rows_b.begin(), rows_b.end());
    std::copy(a.data().begin(), a.data().begin() + 8, mixed.begin());
    EncoderOptions<double> opts;
    opts.self_only_attention = true;
    auto ya = enc.forward(a, opts);
    auto ym = enc.forward(Tensor<double>::from_data({4, 8}, mixed), opts);
    for (std::size_t j = 0; j < 8; ++j) {
        EXPECT_NEAR(ya.data()[j], ym.data()[j], 1e-12);
    }
}
