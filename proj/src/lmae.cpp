#include "lmae/lmae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "lmae/ops.hpp"

namespace lmae {

LMAEConfig LMAEConfig::standard(const PatchGeometry& geometry, std::size_t frames, std::size_t d_model,
                                std::size_t depth, std::size_t heads, TemporalVariant temporal) {
    LMAEConfig c;
    c.geometry = geometry;
    c.frames = frames;
    c.encoder = {depth, heads, d_model, 4 * d_model};
    const std::size_t d_dec = d_model / 2;
    std::size_t dec_heads = heads;
    while (dec_heads > 1 && d_dec % dec_heads != 0) {
        --dec_heads;
    }
    c.decoder = {std::max<std::size_t>(depth / 2, 1), dec_heads, d_dec, 4 * d_dec};
    c.temporal = temporal;
    return c;
}

void LMAEConfig::validate() const {
    geometry.validate();
    if (frames == 0) {
        throw std::invalid_argument("lmae: frames must be positive");
    }
    encoder.validate();
    decoder.validate();
    if (decoder.d_model >= encoder.d_model) {
        throw std::invalid_argument("lmae: decoder width must be below encoder width");
    }
}

template <typename Real>
LMAEModel<Real>::LMAEModel(const LMAEConfig& config, Rng& init_rng) : config_(config) {
    config_.validate();
    const std::size_t d = config_.encoder.d_model;
    const std::size_t dd = config_.decoder.d_model;
    const std::size_t pd = config_.geometry.patch_dim();
    embed_ = PatchEmbedder<Real>(params_, kPatchEmbedPrefix, config_.geometry, d, init_rng, config_.input_norm);
    if (config_.temporal == TemporalVariant::time_aware) {
        temporal_ = TimeAwareEncoding<Real>(params_, kTemporalEmbedPrefix, d);
    }
    encoder_ = TransformerEncoder<Real>(params_, kEncoderPrefix, config_.encoder, init_rng);
    const std::string dec = kDecoderPrefix;
    std::tie(dec_embed_weight_, dec_embed_bias_) = add_linear(params_, dec + "embed.", d, dd, init_rng);
    if (config_.temporal == TemporalVariant::time_aware) {
        dec_temporal_ = TimeAwareEncoding<Real>(params_, dec + "temporal_embed.", dd);
    }
    decoder_ = TransformerEncoder<Real>(params_, dec, config_.decoder, init_rng);
    mask_token_ = params_.add(kMaskTokenName, {1, dd}, init::truncated_normal_as<Real>(init_rng, dd));
    std::tie(head_weight_, head_bias_) = add_linear(params_, kPixelHeadPrefix, dd, pd, init_rng);

    if (params_.scalar_count(kDecoderPrefix) >= params_.scalar_count(kEncoderPrefix)) {
        throw std::invalid_argument("lmae: decoder must have fewer parameters than the encoder");
    }
}

template <typename Real>
const TimeAwareEncoding<Real>* LMAEModel<Real>::temporal() const {
    return config_.temporal == TemporalVariant::time_aware ? &temporal_ : nullptr;
}

template <typename Real>
void LMAEModel<Real>::check_sequence(const PatchSequence& sequence) const {
    const std::size_t rows = sequence.frames() * config_.geometry.tokens_per_frame();
    if (sequence.frames() == 0 || sequence.patches.size() != rows * config_.geometry.patch_dim()) {
        throw ShapeError("lmae: sequence holds " + std::to_string(sequence.patches.size()) + " patch values for " +
                         std::to_string(sequence.frames()) + " frames");
    }
}

template <typename Real>
EncodedTokens<Real> LMAEModel<Real>::encode_visible(const PatchSequence& sequence, const TokenMask& mask) const {
    check_sequence(sequence);
    if (mask.frames() != sequence.frames() || mask.grid_side() != config_.geometry.grid_side()) {
        throw ShapeError("lmae: mask does not match the sequence layout");
    }
    EncodedTokens<Real> out;
    out.visible_ids = mask.visible_ids();
    if (out.visible_ids.empty()) {
        throw std::invalid_argument("lmae: every token is masked; the encoder needs at least one visible token");
    }
    auto tokens = embed_tokens(embed_, sequence.patches, sequence.times, out.visible_ids, config_.temporal, temporal());
    out.tokens = encoder_.forward(tokens);
    return out;
}

template <typename Real>
Tensor<Real> LMAEModel<Real>::decode_full(const EncodedTokens<Real>& encoded, const TokenMask& mask,
                                          std::span<const double> times) const {
    const std::size_t visible = encoded.visible_ids.size();
    if (encoded.tokens.rank() != 2 || encoded.tokens.dim(0) != visible || mask.visible_count() != visible) {
        throw ShapeError("lmae: " + std::to_string(encoded.tokens.rank() == 2 ? encoded.tokens.dim(0) : 0) +
                         " encoded tokens for a mask with " + std::to_string(mask.visible_count()) +
                         " visible tokens");
    }
    // Row `visible` of the table is the shared mask token.
    auto projected = linear(encoded.tokens, dec_embed_weight_, dec_embed_bias_);
    auto table = concat_rows(std::vector<Tensor<Real>>{projected, mask_token_});
    std::vector<std::size_t> source(mask.size(), visible);
    for (std::size_t k = 0; k < visible; ++k) {
        source.at(encoded.visible_ids[k]) = k;
    }
    auto full = gather_rows(table, std::span<const std::size_t>(source));
    std::vector<std::size_t> all_ids(mask.size());
    std::iota(all_ids.begin(), all_ids.end(), std::size_t{0});
    const auto* dec_temporal = config_.temporal == TemporalVariant::time_aware ? &dec_temporal_ : nullptr;
    full = add_position_terms(full, std::span<const std::size_t>(all_ids), config_.geometry.tokens_per_frame(), times,
                              config_.temporal, dec_temporal);
    return linear(decoder_.forward(full), head_weight_, head_bias_);
}

template <typename Real>
Tensor<Real> LMAEModel<Real>::target(const PatchSequence& sequence) const {
    check_sequence(sequence);
    const std::size_t pd = config_.geometry.patch_dim();
    const std::size_t rows = sequence.patches.size() / pd;
    std::vector<Real> values(sequence.patches.begin(), sequence.patches.end());
    if (config_.normalize_target) {
        for (std::size_t r = 0; r < rows; ++r) {
            double m = 0.0;
            double v = 0.0;
            for (std::size_t j = 0; j < pd; ++j) {
                m += values[r * pd + j];
            }
            m /= static_cast<double>(pd);
            for (std::size_t j = 0; j < pd; ++j) {
                const double e = values[r * pd + j] - m;
                v += e * e;
            }
            v /= static_cast<double>(pd);
            const double inv = 1.0 / std::sqrt(v + 1e-6);
            for (std::size_t j = 0; j < pd; ++j) {
                values[r * pd + j] = static_cast<Real>((values[r * pd + j] - m) * inv);
            }
        }
    }
    return Tensor<Real>::from_data({rows, pd}, std::move(values));
}

template <typename Real>
Tensor<Real> LMAEModel<Real>::loss(const PatchSequence& sequence, const TokenMask& mask) const {
    auto encoded = encode_visible(sequence, mask);
    auto predicted = decode_full(encoded, mask, sequence.times);
    return reconstruction_loss(predicted, target(sequence), mask);
}

template <typename Real>
Tensor<Real> reconstruction_loss(const Tensor<Real>& predicted, const Tensor<Real>& target, const TokenMask& mask) {
    if (predicted.shape() != target.shape() || predicted.rank() != 2 || predicted.dim(0) != mask.size()) {
        throw ShapeError("reconstruction_loss: predicted " + shape_to_string(predicted.shape()) + ", target " +
                         shape_to_string(target.shape()) + ", mask of " + std::to_string(mask.size()) + " tokens");
    }
    const auto masked = mask.masked_ids();
    if (masked.empty()) {
        throw std::invalid_argument("reconstruction_loss: no masked tokens");
    }
    auto diff = sub(gather_rows(predicted, std::span<const std::size_t>(masked)),
                    gather_rows(target, std::span<const std::size_t>(masked)));
    const double count = static_cast<double>(masked.size() * predicted.dim(1));
    return scale(sum(square(diff)), static_cast<Real>(1.0 / count));
}

template <typename Real>
double pretrain_step(LMAEModel<Real>& model, std::span<const PretrainExample> batch, double lr,
                     const AdamWConfig& adamw) {
    if (batch.empty()) {
        throw std::invalid_argument("pretrain_step: empty batch");
    }
    Tensor<Real> total;
    for (const auto& ex : batch) {
        auto l = model.loss(*ex.sequence, ex.mask);
        total = total.defined() ? add(total, l) : l;
    }
    total = scale(total, static_cast<Real>(1.0 / static_cast<double>(batch.size())));
    const double value = static_cast<double>(total.item());
    if (!std::isfinite(value)) {
        model.parameters().zero_grad();
        throw NumericError("pretrain_step: non-finite loss " + std::to_string(value));
    }
    backward(total);
    adamw_step(model.parameters(), lr, adamw);
    model.parameters().zero_grad();
    return value;
}

template class LMAEModel<float>;
template class LMAEModel<double>;
template Tensor<float> reconstruction_loss(const Tensor<float>&, const Tensor<float>&, const TokenMask&);
template Tensor<double> reconstruction_loss(const Tensor<double>&, const Tensor<double>&, const TokenMask&);
template double pretrain_step(LMAEModel<float>&, std::span<const PretrainExample>, double, const AdamWConfig&);
template double pretrain_step(LMAEModel<double>&, std::span<const PretrainExample>, double, const AdamWConfig&);

}  // namespace lmae
