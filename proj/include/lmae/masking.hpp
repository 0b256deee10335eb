#pragma once

// Token masks for pretraining. Polarity is the same everywhere: visible=true
// tokens feed the encoder, visible=false tokens form the reconstruction set.
//
// Progression-aware masking combines two binary maps on the q x q token grid:
//   m_a = (a < r)          a = Gaussian kernel around a jittered grid center
//   m_b = (b < 1 - 0.1 s)  b ~ U[0,1) i.i.d. per cell, s = severity grade
// and keeps a token visible iff m_a and m_b. The high-a central disk is thus
// always hidden, and each grade step hides about 10% more of the periphery.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lmae/rng.hpp"

namespace lmae {

enum class MaskStrategy { random, visit, prog_aware, prog_aware_random };
enum class KernelVariant { as_printed, isotropic };

std::string_view to_string(MaskStrategy s);
MaskStrategy parse_mask_strategy(std::string_view text);
std::string_view to_string(KernelVariant k);
KernelVariant parse_kernel_variant(std::string_view text);

struct MaskConfig {
    MaskStrategy strategy = MaskStrategy::prog_aware;
    /// Masking ratio for `random`, kernel intensity r for the progression-aware
    /// strategies, unused for `visit`.
    double parameter = 0.75;
    KernelVariant kernel = KernelVariant::isotropic;

    void validate() const;
};

struct GridPoint {
    int x = 0;  // row
    int y = 0;  // column
};

class TokenMask {
public:
    TokenMask() = default;
    TokenMask(std::size_t frames, std::size_t grid_side, bool visible = true);

    [[nodiscard]] std::size_t frames() const noexcept { return frames_; }
    [[nodiscard]] std::size_t grid_side() const noexcept { return grid_side_; }
    [[nodiscard]] std::size_t tokens_per_frame() const noexcept { return grid_side_ * grid_side_; }
    [[nodiscard]] std::size_t size() const noexcept { return visible_.size(); }

    [[nodiscard]] bool visible(std::size_t token) const { return visible_.at(token) != 0; }
    [[nodiscard]] bool visible(std::size_t frame, std::size_t row, std::size_t col) const;
    void set_visible(std::size_t token, bool v) { visible_.at(token) = v ? 1 : 0; }
    void set_frame(std::size_t frame, std::span<const std::uint8_t> grid);

    [[nodiscard]] std::size_t visible_count() const;
    [[nodiscard]] std::size_t masked_count() const { return size() - visible_count(); }
    [[nodiscard]] std::size_t masked_count_in_frame(std::size_t frame) const;
    /// Ascending flat token ids.
    [[nodiscard]] std::vector<std::size_t> visible_ids() const;
    [[nodiscard]] std::vector<std::size_t> masked_ids() const;

    friend bool operator==(const TokenMask&, const TokenMask&) = default;

private:
    std::size_t frames_ = 0;
    std::size_t grid_side_ = 0;
    std::vector<std::uint8_t> visible_;
};

/// q x q kernel values, row-major (index i * q + j), maximum 1 at the center.
std::vector<double> gaussian_kernel(std::size_t q, GridPoint center, double r, KernelVariant variant);

/// 1 - 0.1 * grade for grade in 0..4.
double severity_threshold(int grade);

/// One frame's q x q visibility grid (1 = visible). The center is the grid
/// center (q / 2, q / 2) jittered by an independent offset in {-1, 0, +1}
/// per axis, clamped to the grid; it is reported through `center_out`.
std::vector<std::uint8_t> prog_aware_mask(std::size_t q, int grade, double r, KernelVariant variant, Rng& rng,
                                          GridPoint* center_out = nullptr);

/// Masks exactly floor(ratio * frames * q^2) tokens, uniformly without replacement.
TokenMask random_mask(std::size_t q, std::size_t frames, double ratio, Rng& rng);

/// Hides one uniformly chosen frame entirely.
TokenMask visit_mask(std::size_t q, std::size_t frames, Rng& rng);

/// Per-frame progression-aware masks from each frame's grade, or from a
/// uniformly drawn grade per frame when `randomize_labels` is set.
TokenMask sequence_prog_mask(std::size_t q, std::span<const int> grades, double r, KernelVariant variant, Rng& rng,
                             bool randomize_labels);

/// Dispatches on config.strategy; redraws masks that would hide every token.
TokenMask generate_mask(const MaskConfig& config, std::size_t q, std::span<const int> grades, Rng& rng);

}  // namespace lmae
