#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "lmae/optim.hpp"
#include "lmae/ops.hpp"

using namespace lmae;

TEST(AdamW, FirstStepMovesByLearningRate) {
    // After one step the bias-corrected update is g / (|g| + eps), so each
    // weight moves by lr against the sign of its gradient, after decay.
    ParameterSet<double> params;
    auto w = params.add("w", {3}, {1.0, -2.0, 0.5});
    backward(sum(mul(w, Tensor<double>::from_data({3}, {2.0, -0.5, 3.0}))));
    AdamWConfig cfg;
    cfg.weight_decay = 0.1;
    const double lr = 0.01;
    adamw_step(params, lr, cfg);
    const double expect[3] = {1.0 * (1 - lr * 0.1) - lr * 2.0 / (2.0 + cfg.eps),
                              -2.0 * (1 - lr * 0.1) + lr * 0.5 / (0.5 + cfg.eps),
                              0.5 * (1 - lr * 0.1) - lr * 3.0 / (3.0 + cfg.eps)};
    for (int i = 0; i < 3; ++i) {
        EXPECT_NEAR(w.data()[i], expect[i], 1e-12);
    }
    EXPECT_EQ(params.at("w").step, 1u);
}

TEST(AdamW, DecayDoesNotEnterMoments) {
    ParameterSet<double> a, b;
    auto wa = a.add("w", {1}, {5.0});
    auto wb = b.add("w", {1}, {5.0});
    AdamWConfig with, without;
    with.weight_decay = 0.5;
    for (auto* p : {&a, &b}) {
        backward(sum(p->at("w").value));
    }
    adamw_step(a, 0.1, with);
    adamw_step(b, 0.1, without);
    EXPECT_EQ(a.at("w").first_moment, b.at("w").first_moment);
    EXPECT_EQ(a.at("w").second_moment, b.at("w").second_moment);
}

TEST(AdamW, NonFiniteGradientLeavesWeightsUntouched) {
    ParameterSet<double> params;
    auto w = params.add("w", {2}, {1.0, 2.0});
    auto g = Tensor<double>::from_data({2}, {std::numeric_limits<double>::infinity(), 1.0});
    backward(sum(mul(w, g)));
    EXPECT_THROW(adamw_step(params, 0.1, AdamWConfig{}), NumericError);
    EXPECT_EQ(w.data()[0], 1.0);
    EXPECT_EQ(w.data()[1], 2.0);
    EXPECT_EQ(params.at("w").step, 0u);
}

TEST(OneCycle, EndpointsAndPeak) {
    OneCycleConfig cfg;
    cfg.max_lr = 1e-2;
    const std::size_t total = 100;
    EXPECT_NEAR(onecycle_lr(0, total, cfg), cfg.max_lr / cfg.start_div, 1e-15);
    EXPECT_NEAR(onecycle_lr(30, total, cfg), cfg.max_lr, 1e-15);
    EXPECT_NEAR(onecycle_lr(total, total, cfg), cfg.max_lr / cfg.final_div, 1e-15);
}

TEST(OneCycle, MonotoneOnEachSide) {
    OneCycleConfig cfg;
    const std::size_t total = 200;
    const auto peak = static_cast<std::size_t>(std::lround(cfg.pct_start * total));
    for (std::size_t s = 1; s <= total; ++s) {
        if (s <= peak) {
            ASSERT_GE(onecycle_lr(s, total, cfg), onecycle_lr(s - 1, total, cfg));
        } else {
            ASSERT_LE(onecycle_lr(s, total, cfg), onecycle_lr(s - 1, total, cfg));
        }
    }
}
