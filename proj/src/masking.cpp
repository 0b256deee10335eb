#include "lmae/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace lmae {

std::string_view to_string(MaskStrategy s) {
    switch (s) {
        case MaskStrategy::random:
            return "random";
        case MaskStrategy::visit:
            return "visit";
        case MaskStrategy::prog_aware:
            return "prog_aware";
        case MaskStrategy::prog_aware_random:
            return "prog_aware_random";
    }
    return "?";
}

MaskStrategy parse_mask_strategy(std::string_view text) {
    for (auto s : {MaskStrategy::random, MaskStrategy::visit, MaskStrategy::prog_aware,
                   MaskStrategy::prog_aware_random}) {
        if (text == to_string(s)) {
            return s;
        }
    }
    throw std::invalid_argument("unknown mask strategy '" + std::string(text) +
                                "' (expected random, visit, prog_aware or prog_aware_random)");
}

std::string_view to_string(KernelVariant k) {
    return k == KernelVariant::isotropic ? "isotropic" : "as_printed";
}

KernelVariant parse_kernel_variant(std::string_view text) {
    if (text == "isotropic") {
        return KernelVariant::isotropic;
    }
    if (text == "as_printed") {
        return KernelVariant::as_printed;
    }
    throw std::invalid_argument("unknown kernel variant '" + std::string(text) + "' (expected isotropic or as_printed)");
}

void MaskConfig::validate() const {
    if (!(parameter >= 0.0 && parameter <= 1.0)) {
        throw std::invalid_argument("mask parameter must lie in [0, 1], got " + std::to_string(parameter));
    }
    if (strategy == MaskStrategy::random && parameter >= 1.0) {
        throw std::invalid_argument("random masking ratio must be below 1");
    }
    if ((strategy == MaskStrategy::prog_aware || strategy == MaskStrategy::prog_aware_random) && parameter <= 0.0) {
        throw std::invalid_argument("kernel intensity r must be positive");
    }
}

TokenMask::TokenMask(std::size_t frames, std::size_t grid_side, bool visible)
    : frames_(frames), grid_side_(grid_side), visible_(frames * grid_side * grid_side, visible ? 1 : 0) {}

bool TokenMask::visible(std::size_t frame, std::size_t row, std::size_t col) const {
    return visible_.at(frame * tokens_per_frame() + row * grid_side_ + col) != 0;
}

void TokenMask::set_frame(std::size_t frame, std::span<const std::uint8_t> grid) {
    if (frame >= frames_ || grid.size() != tokens_per_frame()) {
        throw std::out_of_range("TokenMask::set_frame: frame or grid size out of range");
    }
    std::copy(grid.begin(), grid.end(), visible_.begin() + static_cast<std::ptrdiff_t>(frame * tokens_per_frame()));
}

std::size_t TokenMask::visible_count() const {
    return static_cast<std::size_t>(std::count(visible_.begin(), visible_.end(), std::uint8_t{1}));
}

std::size_t TokenMask::masked_count_in_frame(std::size_t frame) const {
    const auto begin = visible_.begin() + static_cast<std::ptrdiff_t>(frame * tokens_per_frame());
    return static_cast<std::size_t>(
        std::count(begin, begin + static_cast<std::ptrdiff_t>(tokens_per_frame()), std::uint8_t{0}));
}

std::vector<std::size_t> TokenMask::visible_ids() const {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < visible_.size(); ++i) {
        if (visible_[i]) {
            ids.push_back(i);
        }
    }
    return ids;
}

std::vector<std::size_t> TokenMask::masked_ids() const {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < visible_.size(); ++i) {
        if (!visible_[i]) {
            ids.push_back(i);
        }
    }
    return ids;
}

std::vector<double> gaussian_kernel(std::size_t q, GridPoint center, double r, KernelVariant variant) {
    if (q < 2) {
        throw std::invalid_argument("gaussian_kernel: grid side must be at least 2");
    }
    if (!(r > 0.0 && r <= 1.0)) {
        throw std::invalid_argument("gaussian_kernel: intensity r must lie in (0, 1], got " + std::to_string(r));
    }
    const int side = static_cast<int>(q);
    if (center.x < 0 || center.y < 0 || center.x >= side || center.y >= side) {
        throw std::invalid_argument("gaussian_kernel: center outside the grid");
    }
    const double coef = -std::numbers::pi / (r * static_cast<double>(q * q));
    std::vector<double> a(q * q);
    for (int i = 0; i < side; ++i) {
        for (int j = 0; j < side; ++j) {
            const double dx = i - center.x;
            const double dy = j - center.y;
            double quad = 0.0;
            if (variant == KernelVariant::as_printed) {
                const double half = (dx - dy) / 2.0;
                quad = half * half;
            } else {
                quad = (dx * dx + dy * dy) / 2.0;
            }
            a[static_cast<std::size_t>(i * side + j)] = std::exp(coef * quad);
        }
    }
    return a;
}

double severity_threshold(int grade) {
    if (grade < 0 || grade > 4) {
        throw std::invalid_argument("severity grade must lie in 0..4, got " + std::to_string(grade));
    }
    return 1.0 - 0.1 * grade;
}

std::vector<std::uint8_t> prog_aware_mask(std::size_t q, int grade, double r, KernelVariant variant, Rng& rng,
                                          GridPoint* center_out) {
    const double t_sev = severity_threshold(grade);
    const int side = static_cast<int>(q);
    GridPoint c{side / 2 + rng.integer(-1, 1), side / 2 + rng.integer(-1, 1)};
    c.x = std::clamp(c.x, 0, side - 1);
    c.y = std::clamp(c.y, 0, side - 1);
    if (center_out != nullptr) {
        *center_out = c;
    }
    const auto a = gaussian_kernel(q, c, r, variant);
    std::vector<std::uint8_t> visible(q * q);
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double b = rng.uniform();
        visible[k] = (a[k] < r) && (b < t_sev) ? 1 : 0;
    }
    return visible;
}

TokenMask random_mask(std::size_t q, std::size_t frames, double ratio, Rng& rng) {
    if (!(ratio >= 0.0 && ratio < 1.0)) {
        throw std::invalid_argument("random_mask: ratio must lie in [0, 1), got " + std::to_string(ratio));
    }
    TokenMask mask(frames, q, true);
    const std::size_t total = mask.size();
    // The small guard keeps e.g. 0.29 * 100 from flooring to 28.
    const auto n_masked = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(total) + 1e-9));
    std::vector<std::size_t> ids(total);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    for (std::size_t k = 0; k < n_masked; ++k) {
        const auto pick = k + static_cast<std::size_t>(rng.below(total - k));
        std::swap(ids[k], ids[pick]);
        mask.set_visible(ids[k], false);
    }
    return mask;
}

TokenMask visit_mask(std::size_t q, std::size_t frames, Rng& rng) {
    if (frames == 0) {
        throw std::invalid_argument("visit_mask: at least one frame required");
    }
    TokenMask mask(frames, q, true);
    const auto frame = static_cast<std::size_t>(rng.below(frames));
    const std::vector<std::uint8_t> hidden(q * q, 0);
    mask.set_frame(frame, hidden);
    return mask;
}

TokenMask sequence_prog_mask(std::size_t q, std::span<const int> grades, double r, KernelVariant variant, Rng& rng,
                             bool randomize_labels) {
    TokenMask mask(grades.size(), q, true);
    for (std::size_t f = 0; f < grades.size(); ++f) {
        const int grade = randomize_labels ? rng.integer(0, 4) : grades[f];
        mask.set_frame(f, prog_aware_mask(q, grade, r, variant, rng));
    }
    return mask;
}

TokenMask generate_mask(const MaskConfig& config, std::size_t q, std::span<const int> grades, Rng& rng) {
    auto draw = [&]() {
        switch (config.strategy) {
            case MaskStrategy::random:
                return random_mask(q, grades.size(), config.parameter, rng);
            case MaskStrategy::visit:
                return visit_mask(q, grades.size(), rng);
            case MaskStrategy::prog_aware:
                return sequence_prog_mask(q, grades, config.parameter, config.kernel, rng, false);
            case MaskStrategy::prog_aware_random:
                return sequence_prog_mask(q, grades, config.parameter, config.kernel, rng, true);
        }
        throw std::logic_error("generate_mask: unhandled strategy");
    };
    // A sequence needs at least one visible token; redraw the rare all-hidden case.
    constexpr int kMaxAttempts = 64;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        auto mask = draw();
        if (mask.visible_count() > 0) {
            return mask;
        }
    }
    throw std::runtime_error("generate_mask: strategy '" + std::string(to_string(config.strategy)) +
                             "' hides every token of the sequence");
}

}  // namespace lmae
