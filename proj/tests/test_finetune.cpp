#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "lmae/finetune.hpp"

using namespace lmae;

namespace {

LMAEConfig pre_config(TemporalVariant temporal = TemporalVariant::time_aware) {
    return LMAEConfig::standard(PatchGeometry{8, 4, 1}, 3, 8, 2, 2, temporal);
}

PatchSequence random_sequence(const LMAEConfig& c, Rng& rng) {
    PatchSequence s;
    s.patches.resize(c.frames * c.geometry.tokens_per_frame() * c.geometry.patch_dim());
    for (auto& v : s.patches) {
        v = static_cast<float>(rng.uniform(0.0, 1.0));
    }
    s.times = {1.0, 2.5, 3.25};
    s.grades = {0, 1, 1};
    return s;
}

Checkpoint pretrained_checkpoint(const LMAEConfig& c, std::uint64_t seed) {
    Rng init(seed);
    LMAEModel<double> model(c, init);
    // move away from init so a transfer is observable
    Rng jitter(seed + 100);
    for (auto& p : model.parameters().items()) {
        for (auto& v : p.value.mutable_data()) {
            v += jitter.uniform(-0.1, 0.1);
        }
    }
    Checkpoint ck;
    store_parameters(ck, model.parameters(), false);
    ck.metadata["input_norm"] = format_pixel_norm(c.input_norm);
    return ck;
}

}  // namespace

TEST(InitPolicy, LabelsAndEnumeration) {
    const auto all = InitPolicy::all();
    EXPECT_FALSE(all.front().any());
    EXPECT_EQ(all.front().label(), "-");
    EXPECT_EQ(all.back().label(), "ETW");
    std::set<std::string> labels;
    for (const auto& p : all) {
        labels.insert(p.label());
    }
    EXPECT_EQ(labels.size(), 8u);
}

TEST(Classifier, PredictionIsADistribution) {
    const auto c = pre_config();
    Rng init(1);
    ClassifierModel<double> model(ClassifierConfig::from(c), init);
    Rng rng(2);
    const auto seq = random_sequence(c, rng);
    const auto p = predict_next(model, seq);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    for (double v : p) {
        EXPECT_GT(v, 0.0);
    }
}

TEST(Classifier, TimeAwareDependsOnlyOnRelativeTimes) {
    const auto c = pre_config(TemporalVariant::time_aware);
    Rng init(3);
    ClassifierModel<double> model(ClassifierConfig::from(c), init);
    Rng rng(4);
    auto seq = random_sequence(c, rng);
    const auto a = predict_next(model, seq);
    for (auto& t : seq.times) {
        t += 7.0;
    }
    const auto b = predict_next(model, seq);
    for (std::size_t i = 0; i < kNumGrades; ++i) {
        EXPECT_NEAR(a[i], b[i], 1e-9);
    }
    seq.times[2] += 1.0;
    const auto d = predict_next(model, seq);
    double diff = 0.0;
    for (std::size_t i = 0; i < kNumGrades; ++i) {
        diff += std::abs(a[i] - d[i]);
    }
    EXPECT_GT(diff, 1e-9);
}

TEST(Classifier, EmptyVariantIgnoresFrameOrder) {
    const auto c = pre_config(TemporalVariant::empty);
    Rng init(5);
    ClassifierModel<double> model(ClassifierConfig::from(c), init);
    Rng rng(6);
    const auto seq = random_sequence(c, rng);
    auto swapped = seq;
    const std::size_t frame = c.geometry.tokens_per_frame() * c.geometry.patch_dim();
    std::swap_ranges(swapped.patches.begin(), swapped.patches.begin() + static_cast<std::ptrdiff_t>(frame),
                     swapped.patches.begin() + static_cast<std::ptrdiff_t>(2 * frame));
    const auto a = predict_next(model, seq);
    const auto b = predict_next(model, swapped);
    for (std::size_t i = 0; i < kNumGrades; ++i) {
        EXPECT_NEAR(a[i], b[i], 1e-12);
    }
}

TEST(Classifier, BaseVariantSeesFrameOrder) {
    const auto c = pre_config(TemporalVariant::base);
    Rng init(7);
    ClassifierModel<double> model(ClassifierConfig::from(c), init);
    Rng rng(8);
    const auto seq = random_sequence(c, rng);
    auto swapped = seq;
    const std::size_t frame = c.geometry.tokens_per_frame() * c.geometry.patch_dim();
    std::swap_ranges(swapped.patches.begin(), swapped.patches.begin() + static_cast<std::ptrdiff_t>(frame),
                     swapped.patches.begin() + static_cast<std::ptrdiff_t>(2 * frame));
    const auto a = predict_next(model, seq);
    const auto b = predict_next(model, swapped);
    double diff = 0.0;
    for (std::size_t i = 0; i < kNumGrades; ++i) {
        diff += std::abs(a[i] - b[i]);
    }
    EXPECT_GT(diff, 1e-12);
}

TEST(LoadPretrained, FullTransferReproducesEncoderExactly) {
    const auto c = pre_config();
    const auto ck = pretrained_checkpoint(c, 9);
    Rng init_a(10), init_b(11);
    ClassifierModel<double> a(ClassifierConfig::from(c), init_a);
    ClassifierModel<double> b(ClassifierConfig::from(c), init_b);
    load_pretrained(a, ck, InitPolicy{});
    load_pretrained(b, ck, InitPolicy{});
    Rng rng(12);
    const auto seq = random_sequence(c, rng);
    const auto ea = a.encode(seq);
    const auto eb = b.encode(seq);
    for (std::size_t i = 0; i < ea.numel(); ++i) {
        EXPECT_EQ(ea.data()[i], eb.data()[i]);
    }
    // transferred values are bit-identical to the archive
    for (const auto& p : a.parameters().items()) {
        if (p.name.rfind(kClassifierPrefix, 0) == 0) {
            continue;
        }
        const auto stored = ck.at(p.name).as<double>();
        ASSERT_EQ(stored.size(), p.value.numel());
        for (std::size_t i = 0; i < stored.size(); ++i) {
            EXPECT_EQ(stored[i], p.value.data()[i]);
        }
    }
}

TEST(LoadPretrained, EmptyPolicyIgnoresCheckpoint) {
    const auto c = pre_config();
    const auto ck1 = pretrained_checkpoint(c, 13);
    const auto ck2 = pretrained_checkpoint(c, 14);
    Rng init_a(15), init_b(15);
    ClassifierModel<double> a(ClassifierConfig::from(c), init_a);
    ClassifierModel<double> b(ClassifierConfig::from(c), init_b);
    load_pretrained(a, ck1, InitPolicy::all().front());
    load_pretrained(b, ck2, InitPolicy::all().front());
    EXPECT_EQ(a.parameters().snapshot(), b.parameters().snapshot());
}

TEST(LoadPretrained, PartialPolicyTouchesOnlySelectedGroups) {
    const auto c = pre_config();
    const auto ck = pretrained_checkpoint(c, 16);
    Rng init_a(17), init_b(17);
    ClassifierModel<double> fresh(ClassifierConfig::from(c), init_a);
    ClassifierModel<double> model(ClassifierConfig::from(c), init_b);
    load_pretrained(model, ck, InitPolicy{false, true, false});
    for (std::size_t i = 0; i < model.parameters().items().size(); ++i) {
        const auto& p = model.parameters().items()[i];
        const auto& f = fresh.parameters().items()[i];
        const bool temporal = p.name.rfind(kTemporalEmbedPrefix, 0) == 0;
        const bool same = std::equal(p.value.data().begin(), p.value.data().end(), f.value.data().begin());
        EXPECT_EQ(same, !temporal) << p.name;
    }
}

TEST(LoadPretrained, MissingGroupIsAnError) {
    const auto c = pre_config();
    auto full = pretrained_checkpoint(c, 18);
    Checkpoint partial;
    for (const auto& [name, entry] : full.entries()) {
        if (name.rfind(kEncoderPrefix, 0) != 0) {
            const auto v = entry.as<double>();
            partial.put<double>(name, entry.shape, std::span<const double>(v));
        }
    }
    Rng init(19);
    ClassifierModel<double> model(ClassifierConfig::from(c), init);
    EXPECT_THROW(load_pretrained(model, partial, InitPolicy{}), std::invalid_argument);
    EXPECT_NO_THROW(load_pretrained(model, partial, InitPolicy{true, true, false}));
}

TEST(LoadPretrained, TemporalGroupSkippedWhenModelHasNone) {
    const auto c = pre_config(TemporalVariant::base);
    const auto ck = pretrained_checkpoint(c, 20);
    Rng init(21);
    ClassifierModel<double> model(ClassifierConfig::from(c), init);
    EXPECT_EQ(model.parameters().scalar_count(kTemporalEmbedPrefix), 0u);
    EXPECT_NO_THROW(load_pretrained(model, ck, InitPolicy{}));
}

TEST(LoadPretrained, InputNormMismatchRejected) {
    auto c = pre_config();
    c.input_norm = PixelNorm{0.2, 0.15};
    const auto ck = pretrained_checkpoint(c, 22);
    Rng init(23);
    ClassifierModel<double> model(ClassifierConfig::from(pre_config()), init);
    EXPECT_THROW(load_pretrained(model, ck, InitPolicy{}), std::invalid_argument);
    EXPECT_NO_THROW(load_pretrained(model, ck, InitPolicy{false, true, true}));
}

TEST(Finetune, LossDecreasesAndTemporalGetsGradient) {
    const auto c = pre_config(TemporalVariant::time_aware);
    Rng init(24);
    ClassifierModel<double> model(ClassifierConfig::from(c), init);
    Rng rng(25);
    std::vector<PatchSequence> seqs;
    for (int i = 0; i < 8; ++i) {
        seqs.push_back(random_sequence(c, rng));
    }
    std::vector<FinetuneExample> batch;
    for (int i = 0; i < 8; ++i) {
        batch.push_back({&seqs[static_cast<std::size_t>(i)], i % 5});
    }
    const std::span<const FinetuneExample> span(batch);

    auto probe = classification_loss(model, span);
    backward(probe);
    double temporal_grad = 0.0;
    for (const auto& p : model.parameters().items()) {
        if (p.name.rfind(kTemporalEmbedPrefix, 0) == 0) {
            for (double g : p.value.grad()) {
                temporal_grad += std::abs(g);
            }
        }
    }
    model.parameters().zero_grad();
    EXPECT_GT(temporal_grad, 0.0);

    const double first = probe.item();
    EXPECT_NEAR(first, std::log(5.0), 0.5);
    double last = first;
    for (int i = 0; i < 100; ++i) {
        last = finetune_step(model, span, 1e-2, AdamWConfig{});
    }
    EXPECT_LT(last, 0.5 * first);
}

TEST(Finetune, RejectsOutOfRangeTarget) {
    const auto c = pre_config();
    Rng init(26);
    ClassifierModel<double> model(ClassifierConfig::from(c), init);
    Rng rng(27);
    const auto seq = random_sequence(c, rng);
    const std::vector<FinetuneExample> batch{{&seq, 5}};
    EXPECT_THROW((void)classification_loss(model, std::span<const FinetuneExample>(batch)), std::invalid_argument);
}
