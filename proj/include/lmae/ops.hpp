#pragma once

// Differentiable operations. No implicit broadcasting: shapes must match
// exactly except where an op documents otherwise (add_bias, batched matmul).
// A mismatch throws ShapeError naming the op and both shapes.

#include <cstddef>
#include <span>
#include <vector>

#include "lmae/tensor.hpp"

namespace lmae {

inline constexpr double kLayerNormEps = 1e-5;

/// [m,k]x[k,n] -> [m,n], or batched [b,m,k]x[b,k,n] -> [b,m,n].
template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b);
/// Elementwise product.
template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real factor);

/// x[..., d] + bias[d]: the only op that repeats an operand.
template <typename Real>
Tensor<Real> add_bias(const Tensor<Real>& x, const Tensor<Real>& bias);

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape);
/// Generic axis permutation: out.shape[i] = x.shape[perm[i]].
template <typename Real>
Tensor<Real> permute(const Tensor<Real>& x, const std::vector<std::size_t>& perm);
/// 2-D transpose.
template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& x);

/// Selects rows (slices along axis 0). Indices may repeat; gradients add up.
template <typename Real>
Tensor<Real> gather_rows(const Tensor<Real>& x, std::span<const std::size_t> rows);
/// Places src row k at output row rows[k] of a zero tensor with `num_rows` rows.
template <typename Real>
Tensor<Real> scatter_rows(const Tensor<Real>& src, std::span<const std::size_t> rows, std::size_t num_rows);
/// Concatenates along axis 0.
template <typename Real>
Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts);

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& x, std::size_t axis);
/// Normalizes over the last axis, then applies gamma * xhat + beta.
template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                        double eps = kLayerNormEps);
/// Exact (erf-based) GELU.
template <typename Real>
Tensor<Real> gelu(const Tensor<Real>& x);
template <typename Real>
Tensor<Real> cos(const Tensor<Real>& x);
template <typename Real>
Tensor<Real> square(const Tensor<Real>& x);

/// Full reductions to a one-element tensor.
template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x);
template <typename Real>
Tensor<Real> mean(const Tensor<Real>& x);
/// Reduction along one axis; the axis is removed from the shape (rank >= 2).
template <typename Real>
Tensor<Real> sum_axis(const Tensor<Real>& x, std::size_t axis);
template <typename Real>
Tensor<Real> mean_axis(const Tensor<Real>& x, std::size_t axis);

/// Mean categorical cross-entropy of logits [batch, classes] against integer targets.
template <typename Real>
Tensor<Real> cross_entropy(const Tensor<Real>& logits, std::span<const int> targets);

}  // namespace lmae
