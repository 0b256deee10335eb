#pragma once

#include <cstddef>

#include "lmae/parameter.hpp"

namespace lmae {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// One AdamW update over every parameter holding a gradient. Weight decay is
/// decoupled: value *= (1 - lr * weight_decay) before the Adam step, and never
/// enters the moments. Parameters without a gradient are skipped.
/// Throws NumericError naming the first parameter with a non-finite gradient;
/// nothing is modified in that case.
template <typename Real>
void adamw_step(ParameterSet<Real>& params, double lr, const AdamWConfig& config);

struct OneCycleConfig {
    double max_lr = 5e-3;
    double pct_start = 0.3;
    double start_div = 25.0;
    double final_div = 1e4;
};

/// Cosine warm-up from max_lr/start_div to max_lr at round(pct_start * total_steps),
/// then cosine annealing down to max_lr/final_div at total_steps.
double onecycle_lr(std::size_t step, std::size_t total_steps, const OneCycleConfig& config);

}  // namespace lmae
