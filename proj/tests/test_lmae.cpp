#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "lmae/lmae.hpp"

using namespace lmae;

namespace {

LMAEConfig small_config(TemporalVariant temporal = TemporalVariant::time_aware) {
    return LMAEConfig::standard(PatchGeometry{8, 4, 1}, 3, 8, 2, 2, temporal);
}

PatchSequence random_sequence(const LMAEConfig& c, Rng& rng) {
    PatchSequence s;
    s.patches.resize(c.frames * c.geometry.tokens_per_frame() * c.geometry.patch_dim());
    for (auto& v : s.patches) {
        v = static_cast<float>(rng.uniform(0.0, 1.0));
    }
    s.times = {0.0, 1.3, 2.1};
    s.grades = {0, 1, 2};
    return s;
}

TokenMask checker_mask(const LMAEConfig& c) {
    TokenMask m(c.frames, c.geometry.grid_side());
    for (std::size_t i = 0; i < m.size(); i += 2) {
        m.set_visible(i, false);
    }
    return m;
}

}  // namespace

TEST(LMAEConfig, DecoderIsNarrowerAndShallower) {
    const auto c = LMAEConfig::standard(PatchGeometry{32, 8, 1}, 3, 64, 4, 4, TemporalVariant::base);
    EXPECT_EQ(c.encoder.d_model, 64u);
    EXPECT_EQ(c.decoder.d_model, 32u);
    EXPECT_EQ(c.decoder.depth, 2u);
    EXPECT_NO_THROW(c.validate());
    auto bad = c;
    bad.geometry.image_size = 30;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(LMAEModel, EncoderSeesOnlyVisibleTokens) {
    const auto c = small_config();
    Rng init(1);
    LMAEModel<double> model(c, init);
    Rng rng(2);
    const auto seq = random_sequence(c, rng);
    const auto mask = checker_mask(c);
    const auto enc = model.encode_visible(seq, mask);
    EXPECT_EQ(enc.tokens.shape(), (Shape{mask.visible_count(), c.encoder.d_model}));
    EXPECT_EQ(enc.visible_ids, mask.visible_ids());
}

TEST(LMAEModel, MaskedPixelsDoNotReachEncoder) {
    const auto c = small_config();
    Rng init(3);
    LMAEModel<double> model(c, init);
    Rng rng(4);
    auto seq = random_sequence(c, rng);
    const auto mask = checker_mask(c);
    const auto before = model.encode_visible(seq, mask);
    const std::size_t pd = c.geometry.patch_dim();
    for (std::size_t id : mask.masked_ids()) {
        for (std::size_t k = 0; k < pd; ++k) {
            seq.patches[id * pd + k] = 1.0f - seq.patches[id * pd + k];
        }
    }
    const auto after = model.encode_visible(seq, mask);
    for (std::size_t i = 0; i < before.tokens.numel(); ++i) {
        EXPECT_EQ(before.tokens.data()[i], after.tokens.data()[i]);
    }
}

TEST(LMAEModel, DecoderSmallerThanEncoder) {
    const auto c = LMAEConfig::standard(PatchGeometry{32, 8, 1}, 3, 64, 4, 4, TemporalVariant::time_aware);
    Rng init(5);
    LMAEModel<float> model(c, init);
    const auto& p = model.parameters();
    EXPECT_LT(p.scalar_count(kDecoderPrefix), p.scalar_count(kEncoderPrefix));
    EXPECT_NE(p.find(kMaskTokenName), nullptr);
    EXPECT_GT(p.scalar_count(kPatchEmbedPrefix), 0u);
    EXPECT_GT(p.scalar_count(kTemporalEmbedPrefix), 0u);
    EXPECT_GT(p.scalar_count(kPixelHeadPrefix), 0u);
}

TEST(LMAEModel, DecodeShapeCoversEveryToken) {
    const auto c = small_config();
    Rng init(6);
    LMAEModel<double> model(c, init);
    Rng rng(7);
    const auto seq = random_sequence(c, rng);
    const auto mask = checker_mask(c);
    const auto pred = model.decode_full(model.encode_visible(seq, mask), mask, seq.times);
    EXPECT_EQ(pred.shape(), (Shape{c.frames * c.geometry.tokens_per_frame(), c.geometry.patch_dim()}));
}

TEST(ReconstructionLoss, SingleMaskedTokenIsMeanSquaredError) {
    TokenMask mask(1, 2);
    mask.set_visible(2, false);
    std::vector<double> p(4 * 3), t(4 * 3);
    Rng rng(8);
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = rng.uniform(-1.0, 1.0);
        t[i] = rng.uniform(-1.0, 1.0);
    }
    const double e = 0.25;
    for (std::size_t k = 0; k < 3; ++k) {
        t[2 * 3 + k] = p[2 * 3 + k] + e;
    }
    const auto pred = Tensor<double>::from_data({4, 3}, p);
    const auto target = Tensor<double>::from_data({4, 3}, t);
    EXPECT_NEAR(reconstruction_loss(pred, target, mask).item(), e * e, 1e-15);
}

TEST(ReconstructionLoss, VisibleTokensCarryNoSignal) {
    TokenMask mask(2, 2);
    mask.set_visible(0, false);
    mask.set_visible(5, false);
    mask.set_visible(6, false);
    Rng rng(9);
    std::vector<double> p(8 * 4), t(8 * 4);
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = rng.uniform(-1.0, 1.0);
        t[i] = rng.uniform(-1.0, 1.0);
    }
    auto pred = Tensor<double>::from_data({8, 4}, p, true);
    const double base = reconstruction_loss(pred, Tensor<double>::from_data({8, 4}, t), mask).item();

    // oracle: plain mean over masked rows
    double sse = 0.0;
    for (std::size_t id : mask.masked_ids()) {
        for (std::size_t k = 0; k < 4; ++k) {
            sse += (p[id * 4 + k] - t[id * 4 + k]) * (p[id * 4 + k] - t[id * 4 + k]);
        }
    }
    EXPECT_NEAR(base, sse / (3.0 * 4.0), 1e-14);

    auto t2 = t;
    for (std::size_t id : mask.visible_ids()) {
        for (std::size_t k = 0; k < 4; ++k) {
            t2[id * 4 + k] += 5.0;
        }
    }
    const auto loss = reconstruction_loss(pred, Tensor<double>::from_data({8, 4}, t2), mask);
    EXPECT_EQ(loss.item(), base);
    backward(loss);
    for (std::size_t id : mask.visible_ids()) {
        for (std::size_t k = 0; k < 4; ++k) {
            EXPECT_EQ(pred.grad()[id * 4 + k], 0.0);
        }
    }
    for (std::size_t id : mask.masked_ids()) {
        EXPECT_NE(pred.grad()[id * 4], 0.0);
    }
}

TEST(ReconstructionLoss, RejectsFullyVisibleMask) {
    TokenMask mask(1, 2);
    const auto x = Tensor<double>::zeros({4, 3});
    EXPECT_ANY_THROW((void)reconstruction_loss(x, x, mask));
}

TEST(LMAEModel, InputNormAppliesToEncoderButNotTarget) {
    auto c = small_config();
    Rng rng(10);
    const auto seq = random_sequence(c, rng);
    const auto mask = checker_mask(c);

    Rng init_a(11);
    LMAEModel<double> plain(c, init_a);
    auto cn = c;
    cn.input_norm = PixelNorm{0.25, 0.5};
    Rng init_b(11);
    LMAEModel<double> normed(cn, init_b);

    auto shifted = seq;
    for (auto& v : shifted.patches) {
        v = static_cast<float>((static_cast<double>(v) - 0.25) / 0.5);
    }
    const auto a = normed.encode_visible(seq, mask);
    const auto b = plain.encode_visible(shifted, mask);
    for (std::size_t i = 0; i < a.tokens.numel(); ++i) {
        EXPECT_NEAR(a.tokens.data()[i], b.tokens.data()[i], 1e-6);
    }
    const auto ta = normed.target(seq);
    const auto tb = plain.target(seq);
    for (std::size_t i = 0; i < ta.numel(); ++i) {
        EXPECT_EQ(ta.data()[i], tb.data()[i]);
    }
}

TEST(LMAEModel, NormalizedTargetHasZeroMeanPerPatch) {
    auto c = small_config();
    c.normalize_target = true;
    Rng init(12);
    LMAEModel<double> model(c, init);
    Rng rng(13);
    const auto seq = random_sequence(c, rng);
    const auto t = model.target(seq);
    const std::size_t pd = c.geometry.patch_dim();
    for (std::size_t r = 0; r < t.shape()[0]; ++r) {
        double s = 0.0;
        for (std::size_t k = 0; k < pd; ++k) {
            s += t.data()[r * pd + k];
        }
        EXPECT_NEAR(s / static_cast<double>(pd), 0.0, 1e-9);
    }
}

TEST(LMAEModel, TimesMatterOnlyForTimeAware) {
    Rng rng(14);
    for (auto variant : {TemporalVariant::base, TemporalVariant::time_aware}) {
        const auto c = small_config(variant);
        Rng init(15);
        LMAEModel<double> model(c, init);
        auto seq = random_sequence(c, rng);
        const auto mask = checker_mask(c);
        const double a = model.loss(seq, mask).item();
        seq.times = {0.0, 0.4, 3.9};
        const double b = model.loss(seq, mask).item();
        if (variant == TemporalVariant::base) {
            EXPECT_EQ(a, b);
        } else {
            EXPECT_NE(a, b);
        }
    }
}

TEST(PretrainStep, ReducesLossOnFixedExample) {
    const auto c = small_config();
    Rng init(16);
    LMAEModel<double> model(c, init);
    Rng rng(17);
    const auto seq = random_sequence(c, rng);
    const std::vector<PretrainExample> batch{{&seq, checker_mask(c)}};
    const double first = model.loss(seq, batch[0].mask).item();
    for (int i = 0; i < 60; ++i) {
        (void)pretrain_step(model, std::span<const PretrainExample>(batch), 5e-3, AdamWConfig{});
    }
    EXPECT_LT(model.loss(seq, batch[0].mask).item(), 0.5 * first);
}

TEST(PretrainStep, NonFiniteLossLeavesWeightsUntouched) {
    const auto c = small_config();
    Rng init(18);
    LMAEModel<double> model(c, init);
    Rng rng(19);
    auto seq = random_sequence(c, rng);
    seq.patches[0] = std::nanf("");
    auto mask = checker_mask(c);
    mask.set_visible(0, true);
    const auto before = model.parameters().snapshot();
    const std::vector<PretrainExample> batch{{&seq, mask}};
    EXPECT_THROW((void)pretrain_step(model, std::span<const PretrainExample>(batch), 1e-3, AdamWConfig{}),
                 NumericError);
    EXPECT_EQ(model.parameters().snapshot(), before);
}
