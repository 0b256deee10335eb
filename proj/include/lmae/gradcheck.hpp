#pragma once

// Central finite-difference checks of reverse-mode gradients, in double
// precision. Error per tensor is ||analytic - numeric|| / max(||analytic||,
// ||numeric||, floor), floor = 1e-3 times the gradient norm over all of the
// check's inputs. The floor keeps tensors whose true gradient is zero (e.g.
// attention key biases) from dividing difference noise by nothing. A check
// reports the worst tensor.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lmae/tensor.hpp"

namespace lmae {

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-4;
inline constexpr double kGradCheckFloor = 1e-3;

struct GradCheckResult {
    std::string name;
    double max_rel_error = 0.0;
    bool passed = false;
    std::string worst_input;
};

double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric, double floor = 1e-8);

/// `loss` must rebuild the graph from the current values of `inputs` each call.
GradCheckResult check_gradients(const std::string& name, const std::function<Tensor<double>()>& loss,
                                const std::vector<std::pair<std::string, Tensor<double>>>& inputs,
                                double tolerance = kGradCheckTolerance, double step = kGradCheckStep);

/// Every differentiable op, the embedding and transformer modules, the
/// classifier, and the tiny end-to-end autoencoder (8x8 frames, P=4, T=2,
/// D_enc=16, D_dec=8).
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, double tolerance = kGradCheckTolerance);

}  // namespace lmae
