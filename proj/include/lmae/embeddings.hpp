#pragma once

// Patch tokenization, the fixed sinusoidal positional code, and the learnable
// time-aware temporal code.
//
// Tokens of a sequence of T frames are addressed by a flat id
// `frame * tokens_per_frame + patch`, with patches in row-major grid order.
// Every token receives projection + spatial code(patch) + temporal term(frame).

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lmae/image.hpp"
#include "lmae/parameter.hpp"
#include "lmae/tensor.hpp"

namespace lmae {

enum class TemporalVariant { empty, base, time_aware };

std::string_view to_string(TemporalVariant v);
TemporalVariant parse_temporal_variant(std::string_view text);

/// p_k with component 2l = sin(w_l k), 2l+1 = cos(w_l k), w_l = 10000^(-2l/d).
std::vector<double> sinusoidal_pe(std::size_t position, std::size_t dim);

class SinusoidalPETable {
public:
    SinusoidalPETable(std::size_t max_positions, std::size_t d_model);

    [[nodiscard]] std::span<const double> row(std::size_t position) const;
    [[nodiscard]] std::size_t d_model() const noexcept { return d_model_; }
    [[nodiscard]] std::size_t max_positions() const noexcept { return max_positions_; }

private:
    std::size_t max_positions_;
    std::size_t d_model_;
    std::vector<double> entries_;
};

/// A patchified frame sequence as fed to the models.
struct PatchSequence {
    std::vector<float> patches;  // [frames * tokens_per_frame, patch_dim], row-major
    std::vector<double> times;   // years, nondecreasing
    std::vector<int> grades;     // per-frame severity, used by progression-aware masking

    [[nodiscard]] std::size_t frames() const { return times.size(); }
};

/// Fixed affine map applied to pixels before the patch projection, usually
/// the training split's pixel mean and standard deviation. Reconstruction
/// targets never see it.
struct PixelNorm {
    double mean = 0.0;
    double stddev = 1.0;

    [[nodiscard]] bool identity() const { return mean == 0.0 && stddev == 1.0; }
    friend bool operator==(const PixelNorm&, const PixelNorm&) = default;
};

/// "mean stddev" as hex floats (exact round trip), for checkpoint metadata.
std::string format_pixel_norm(const PixelNorm& norm);
PixelNorm parse_pixel_norm(std::string_view text);

struct PatchGeometry {
    std::size_t image_size = 32;  // square frames
    std::size_t patch_size = 8;
    std::size_t channels = 1;

    [[nodiscard]] std::size_t grid_side() const { return image_size / patch_size; }
    [[nodiscard]] std::size_t tokens_per_frame() const { return grid_side() * grid_side(); }
    [[nodiscard]] std::size_t patch_dim() const { return patch_size * patch_size * channels; }

    /// Throws std::invalid_argument unless the image side is a positive multiple of the patch size.
    void validate() const;
};

/// Flattens a frame into [tokens_per_frame, patch_dim] rows; each patch is laid
/// out as (py, px, channel).
std::vector<float> patchify(const Image& frame, const PatchGeometry& geometry);
Image unpatchify(std::span<const float> patches, const PatchGeometry& geometry);

/// Learnable code cos(omega[i] * (t - t0) + tau[i]) with one frequency and
/// one phase per embedding dimension. Initialized so that at integer
/// t - t0 it reproduces the sinusoidal table.
template <typename Real>
class TimeAwareEncoding {
public:
    TimeAwareEncoding() = default;
    TimeAwareEncoding(ParameterSet<Real>& params, const std::string& prefix, std::size_t d_model);

    /// [times.size(), d_model]; row i encodes times[i] - t0.
    [[nodiscard]] Tensor<Real> encode(std::span<const double> times, double t0) const;

    [[nodiscard]] const Tensor<Real>& omega() const { return omega_; }
    [[nodiscard]] const Tensor<Real>& tau() const { return tau_; }
    [[nodiscard]] std::size_t d_model() const { return omega_.numel(); }

    static std::vector<Real> initial_omega(std::size_t d_model);
    static std::vector<Real> initial_tau(std::size_t d_model);

private:
    Tensor<Real> omega_;
    Tensor<Real> tau_;
};

/// Per-frame patch projection (equivalent to a (1, P, P) convolution with stride (1, P, P)).
template <typename Real>
class PatchEmbedder {
public:
    PatchEmbedder() = default;
    PatchEmbedder(ParameterSet<Real>& params, const std::string& prefix, const PatchGeometry& geometry,
                  std::size_t d_model, Rng& rng, PixelNorm input_norm = {});

    /// [n, patch_dim] -> [n, d_model].
    [[nodiscard]] Tensor<Real> project(const Tensor<Real>& patches) const;

    [[nodiscard]] const PatchGeometry& geometry() const { return geometry_; }
    [[nodiscard]] const PixelNorm& input_norm() const { return input_norm_; }
    [[nodiscard]] std::size_t d_model() const { return d_model_; }
    [[nodiscard]] const Tensor<Real>& weight() const { return weight_; }
    [[nodiscard]] const Tensor<Real>& bias() const { return bias_; }

private:
    PatchGeometry geometry_;
    PixelNorm input_norm_;
    std::size_t d_model_ = 0;
    Tensor<Real> weight_;
    Tensor<Real> bias_;
};

/// Adds the spatial code and the variant's temporal term to `tokens`, whose
/// row k belongs to flat token id token_ids[k]. `temporal` is required for
/// the time_aware variant and ignored otherwise. Times must be nondecreasing.
template <typename Real>
Tensor<Real> add_position_terms(const Tensor<Real>& tokens, std::span<const std::size_t> token_ids,
                                std::size_t tokens_per_frame, std::span<const double> times,
                                TemporalVariant variant, const TimeAwareEncoding<Real>* temporal);

/// Embeds the selected tokens of a patchified sequence (patches holds
/// T * tokens_per_frame rows). Unselected patches are never read.
template <typename Real>
Tensor<Real> embed_tokens(const PatchEmbedder<Real>& embedder, std::span<const float> patches,
                          std::span<const double> times, std::span<const std::size_t> token_ids,
                          TemporalVariant variant, const TimeAwareEncoding<Real>* temporal);

/// embed_tokens over every token of the sequence.
template <typename Real>
Tensor<Real> embed_sequence(const PatchEmbedder<Real>& embedder, std::span<const float> patches,
                            std::span<const double> times, TemporalVariant variant,
                            const TimeAwareEncoding<Real>* temporal);

/// Per-frame temporal term for a variant: [T, d_model]. Undefined tensor for `empty`.
template <typename Real>
Tensor<Real> temporal_terms(std::span<const double> times, std::size_t d_model, TemporalVariant variant,
                            const TimeAwareEncoding<Real>* temporal);

}  // namespace lmae
