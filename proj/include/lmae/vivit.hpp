#pragma once

// Joint space-time transformer encoder (ViViT "model 1"): every token attends
// to every other token of the sequence. Pre-norm blocks:
//   z' = MSA(LN(z)) + z
//   z  = MLP(LN(z')) + z'
// followed by a final LayerNorm over all tokens. No dropout.

#include <cstddef>
#include <string>
#include <vector>

#include "lmae/parameter.hpp"
#include "lmae/tensor.hpp"

namespace lmae {

struct TransformerConfig {
    std::size_t depth = 4;
    std::size_t heads = 4;
    std::size_t d_model = 64;
    std::size_t mlp_dim = 256;

    [[nodiscard]] std::size_t head_dim() const { return d_model / heads; }
    void validate() const;
};

template <typename Real>
struct EncoderOptions {
    /// Replaces every attention matrix by the identity (each token sees only
    /// itself). Used to isolate per-token computation in tests.
    bool self_only_attention = false;
    /// When set, receives the [heads, n, n] attention probabilities of each layer.
    std::vector<Tensor<Real>>* attention_probs = nullptr;
};

template <typename Real>
class TransformerEncoder {
public:
    TransformerEncoder() = default;
    TransformerEncoder(ParameterSet<Real>& params, const std::string& prefix, const TransformerConfig& config,
                       Rng& rng);

    /// [n, d_model] -> [n, d_model].
    [[nodiscard]] Tensor<Real> forward(const Tensor<Real>& tokens, const EncoderOptions<Real>& options = {}) const;

    /// One residual attention sub-block: x + MSA(LN(x)).
    [[nodiscard]] Tensor<Real> attention_block(std::size_t layer, const Tensor<Real>& x,
                                               const EncoderOptions<Real>& options = {}) const;
    /// One residual MLP sub-block: x + MLP(LN(x)).
    [[nodiscard]] Tensor<Real> mlp_block(std::size_t layer, const Tensor<Real>& x) const;

    [[nodiscard]] const TransformerConfig& config() const { return config_; }

private:
    struct Layer {
        Tensor<Real> norm1_weight, norm1_bias;
        Tensor<Real> q_weight, q_bias, k_weight, k_bias, v_weight, v_bias;
        Tensor<Real> out_weight, out_bias;
        Tensor<Real> norm2_weight, norm2_bias;
        Tensor<Real> fc1_weight, fc1_bias, fc2_weight, fc2_bias;
    };

    TransformerConfig config_;
    std::vector<Layer> layers_;
    Tensor<Real> norm_weight_;
    Tensor<Real> norm_bias_;
};

/// Registers a [in, out] weight (truncated normal, std 0.02) and zero [out] bias.
template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> add_linear(ParameterSet<Real>& params, const std::string& prefix,
                                                 std::size_t in, std::size_t out, Rng& rng);

/// Registers LayerNorm scale (ones) and shift (zeros).
template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> add_layer_norm(ParameterSet<Real>& params, const std::string& prefix,
                                                     std::size_t dim);

template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias);

}  // namespace lmae
