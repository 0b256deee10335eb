#include "lmae/vivit.hpp"

#include <cmath>
#include <stdexcept>

#include "lmae/ops.hpp"

namespace lmae {

void TransformerConfig::validate() const {
    if (depth == 0 || d_model == 0 || heads == 0 || mlp_dim == 0) {
        throw std::invalid_argument("transformer: depth, d_model, heads and mlp_dim must be positive");
    }
    if (d_model % heads != 0) {
        throw std::invalid_argument("transformer: d_model " + std::to_string(d_model) +
                                    " is not divisible by heads " + std::to_string(heads));
    }
    if (d_model % 2 != 0) {
        throw std::invalid_argument("transformer: d_model must be even for sinusoidal position codes");
    }
}

template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> add_linear(ParameterSet<Real>& params, const std::string& prefix,
                                                 std::size_t in, std::size_t out, Rng& rng) {
    auto w = params.add(prefix + "weight", {in, out}, init::truncated_normal_as<Real>(rng, in * out));
    auto b = params.add(prefix + "bias", {out}, std::vector<Real>(out, Real{0}));
    return {w, b};
}

template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> add_layer_norm(ParameterSet<Real>& params, const std::string& prefix,
                                                     std::size_t dim) {
    auto g = params.add(prefix + "weight", {dim}, std::vector<Real>(dim, Real{1}));
    auto b = params.add(prefix + "bias", {dim}, std::vector<Real>(dim, Real{0}));
    return {g, b};
}

template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias) {
    return add_bias(matmul(x, weight), bias);
}

template <typename Real>
TransformerEncoder<Real>::TransformerEncoder(ParameterSet<Real>& params, const std::string& prefix,
                                             const TransformerConfig& config, Rng& rng)
    : config_(config) {
    config_.validate();
    const std::size_t d = config_.d_model;
    for (std::size_t l = 0; l < config_.depth; ++l) {
        const std::string p = prefix + "blocks." + std::to_string(l) + ".";
        Layer layer;
        std::tie(layer.norm1_weight, layer.norm1_bias) = add_layer_norm(params, p + "norm1.", d);
        std::tie(layer.q_weight, layer.q_bias) = add_linear(params, p + "attn.q.", d, d, rng);
        std::tie(layer.k_weight, layer.k_bias) = add_linear(params, p + "attn.k.", d, d, rng);
        std::tie(layer.v_weight, layer.v_bias) = add_linear(params, p + "attn.v.", d, d, rng);
        std::tie(layer.out_weight, layer.out_bias) = add_linear(params, p + "attn.out.", d, d, rng);
        std::tie(layer.norm2_weight, layer.norm2_bias) = add_layer_norm(params, p + "norm2.", d);
        std::tie(layer.fc1_weight, layer.fc1_bias) = add_linear(params, p + "mlp.fc1.", d, config_.mlp_dim, rng);
        std::tie(layer.fc2_weight, layer.fc2_bias) = add_linear(params, p + "mlp.fc2.", config_.mlp_dim, d, rng);
        layers_.push_back(std::move(layer));
    }
    std::tie(norm_weight_, norm_bias_) = add_layer_norm(params, prefix + "norm.", d);
}

template <typename Real>
Tensor<Real> TransformerEncoder<Real>::attention_block(std::size_t layer, const Tensor<Real>& x,
                                                       const EncoderOptions<Real>& options) const {
    const auto& ly = layers_.at(layer);
    const std::size_t n = x.dim(0);
    const std::size_t d = config_.d_model;
    const std::size_t h = config_.heads;
    const std::size_t hd = config_.head_dim();

    auto normed = layer_norm(x, ly.norm1_weight, ly.norm1_bias);
    // [n, d] -> [h, n, hd]
    auto heads_of = [&](const Tensor<Real>& t) { return permute(reshape(t, {n, h, hd}), {1, 0, 2}); };
    auto v = heads_of(linear(normed, ly.v_weight, ly.v_bias));

    Tensor<Real> mixed;
    if (options.self_only_attention) {
        mixed = v;
    } else {
        auto q = heads_of(linear(normed, ly.q_weight, ly.q_bias));
        auto k_t = permute(reshape(linear(normed, ly.k_weight, ly.k_bias), {n, h, hd}), {1, 2, 0});
        auto scores = scale(matmul(q, k_t), static_cast<Real>(1.0 / std::sqrt(static_cast<double>(hd))));
        auto probs = softmax(scores, 2);
        if (options.attention_probs != nullptr) {
            options.attention_probs->push_back(probs);
        }
        mixed = matmul(probs, v);
    }
    auto merged = reshape(permute(mixed, {1, 0, 2}), {n, d});
    return add(x, linear(merged, ly.out_weight, ly.out_bias));
}

template <typename Real>
Tensor<Real> TransformerEncoder<Real>::mlp_block(std::size_t layer, const Tensor<Real>& x) const {
    const auto& ly = layers_.at(layer);
    auto normed = layer_norm(x, ly.norm2_weight, ly.norm2_bias);
    auto hidden = gelu(linear(normed, ly.fc1_weight, ly.fc1_bias));
    return add(x, linear(hidden, ly.fc2_weight, ly.fc2_bias));
}

template <typename Real>
Tensor<Real> TransformerEncoder<Real>::forward(const Tensor<Real>& tokens, const EncoderOptions<Real>& options) const {
    if (tokens.rank() != 2 || tokens.dim(1) != config_.d_model) {
        throw ShapeError("encoder: expected [n, " + std::to_string(config_.d_model) + "] tokens, got " +
                         shape_to_string(tokens.shape()));
    }
    auto x = tokens;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        x = attention_block(l, x, options);
        x = mlp_block(l, x);
    }
    return layer_norm(x, norm_weight_, norm_bias_);
}

#define LMAE_INSTANTIATE_VIVIT(Real)                                                                              \
    template class TransformerEncoder<Real>;                                                                      \
    template std::pair<Tensor<Real>, Tensor<Real>> add_linear(ParameterSet<Real>&, const std::string&,            \
                                                              std::size_t, std::size_t, Rng&);                    \
    template std::pair<Tensor<Real>, Tensor<Real>> add_layer_norm(ParameterSet<Real>&, const std::string&,        \
                                                                  std::size_t);                                   \
    template Tensor<Real> linear(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&);

LMAE_INSTANTIATE_VIVIT(float)
LMAE_INSTANTIATE_VIVIT(double)

#undef LMAE_INSTANTIATE_VIVIT

}  // namespace lmae
