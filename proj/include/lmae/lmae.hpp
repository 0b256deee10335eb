#pragma once

// Longitudinal masked autoencoder. The encoder sees only the visible tokens of
// a frame sequence; a narrower decoder receives the projected encoder outputs
// at visible positions and one shared mask token everywhere else, adds its own
// spatial and temporal codes, and predicts pixels for every token. The loss
// covers masked tokens only.
//
// Parameter prefixes (checkpoint groups):
//   patch_embed.  temporal_embed.  encoder.
//   decoder.  (including decoder.embed. and decoder.temporal_embed.)
//   mask_token  pixel_head.

#include <cstddef>
#include <span>
#include <vector>

#include "lmae/embeddings.hpp"
#include "lmae/masking.hpp"
#include "lmae/optim.hpp"
#include "lmae/parameter.hpp"
#include "lmae/vivit.hpp"

namespace lmae {

inline constexpr const char* kPatchEmbedPrefix = "patch_embed.";
inline constexpr const char* kTemporalEmbedPrefix = "temporal_embed.";
inline constexpr const char* kEncoderPrefix = "encoder.";
inline constexpr const char* kDecoderPrefix = "decoder.";
inline constexpr const char* kMaskTokenName = "mask_token";
inline constexpr const char* kPixelHeadPrefix = "pixel_head.";

struct LMAEConfig {
    PatchGeometry geometry;
    std::size_t frames = 3;
    TransformerConfig encoder{4, 4, 64, 256};
    TransformerConfig decoder{2, 4, 32, 128};
    TemporalVariant temporal = TemporalVariant::time_aware;
    /// Reconstruct per-patch standardized pixels instead of raw [0, 1] values.
    bool normalize_target = false;
    /// Applied to encoder inputs only.
    PixelNorm input_norm;

    /// Encoder of width d_model and depth `depth`; decoder at half width and half depth.
    static LMAEConfig standard(const PatchGeometry& geometry, std::size_t frames, std::size_t d_model,
                               std::size_t depth, std::size_t heads, TemporalVariant temporal);

    void validate() const;
};

template <typename Real>
struct EncodedTokens {
    Tensor<Real> tokens;                    // [visible, D_enc]
    std::vector<std::size_t> visible_ids;  // flat token ids, ascending
};

template <typename Real>
class LMAEModel {
public:
    LMAEModel(const LMAEConfig& config, Rng& init_rng);
    LMAEModel(const LMAEModel&) = delete;
    LMAEModel& operator=(const LMAEModel&) = delete;
    LMAEModel(LMAEModel&&) noexcept = default;
    LMAEModel& operator=(LMAEModel&&) noexcept = default;

    [[nodiscard]] EncodedTokens<Real> encode_visible(const PatchSequence& sequence, const TokenMask& mask) const;
    /// [frames * tokens_per_frame, patch_dim] pixel predictions.
    [[nodiscard]] Tensor<Real> decode_full(const EncodedTokens<Real>& encoded, const TokenMask& mask,
                                           std::span<const double> times) const;
    /// Target pixels for every token (no gradient), normalized if configured.
    [[nodiscard]] Tensor<Real> target(const PatchSequence& sequence) const;
    /// encode_visible -> decode_full -> reconstruction_loss.
    [[nodiscard]] Tensor<Real> loss(const PatchSequence& sequence, const TokenMask& mask) const;

    [[nodiscard]] const LMAEConfig& config() const { return config_; }
    [[nodiscard]] ParameterSet<Real>& parameters() { return params_; }
    [[nodiscard]] const ParameterSet<Real>& parameters() const { return params_; }
    [[nodiscard]] const PatchEmbedder<Real>& patch_embedder() const { return embed_; }
    [[nodiscard]] const TransformerEncoder<Real>& encoder() const { return encoder_; }
    [[nodiscard]] const TimeAwareEncoding<Real>* temporal() const;
    [[nodiscard]] const Tensor<Real>& mask_token() const { return mask_token_; }

private:
    void check_sequence(const PatchSequence& sequence) const;

    LMAEConfig config_;
    ParameterSet<Real> params_;
    PatchEmbedder<Real> embed_;
    TimeAwareEncoding<Real> temporal_;
    TransformerEncoder<Real> encoder_;
    Tensor<Real> dec_embed_weight_;
    Tensor<Real> dec_embed_bias_;
    TimeAwareEncoding<Real> dec_temporal_;
    TransformerEncoder<Real> decoder_;
    Tensor<Real> mask_token_;
    Tensor<Real> head_weight_;
    Tensor<Real> head_bias_;
};

/// Sum of squared errors over masked tokens divided by (masked tokens * patch_dim).
template <typename Real>
Tensor<Real> reconstruction_loss(const Tensor<Real>& predicted, const Tensor<Real>& target, const TokenMask& mask);

struct PretrainExample {
    const PatchSequence* sequence = nullptr;
    TokenMask mask;
};

/// Batch-mean loss, one backward pass and one AdamW update at `lr`; returns
/// the loss. Throws NumericError on a non-finite loss before touching weights.
template <typename Real>
double pretrain_step(LMAEModel<Real>& model, std::span<const PretrainExample> batch, double lr,
                     const AdamWConfig& adamw);

inline constexpr double kPretrainLearningRate = 5e-3;
inline constexpr double kPretrainWeightDecay = 1e-5;

}  // namespace lmae
