#include "lmae/embeddings.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <numbers>
#include <stdexcept>

#include "lmae/ops.hpp"

namespace lmae {

std::string_view to_string(TemporalVariant v) {
    switch (v) {
        case TemporalVariant::empty:
            return "empty";
        case TemporalVariant::base:
            return "base";
        case TemporalVariant::time_aware:
            return "time_aware";
    }
    return "?";
}

TemporalVariant parse_temporal_variant(std::string_view text) {
    if (text == "empty") {
        return TemporalVariant::empty;
    }
    if (text == "base") {
        return TemporalVariant::base;
    }
    if (text == "time_aware") {
        return TemporalVariant::time_aware;
    }
    throw std::invalid_argument("unknown temporal variant '" + std::string(text) +
                                "' (expected empty, base or time_aware)");
}

std::vector<double> sinusoidal_pe(std::size_t position, std::size_t dim) {
    if (dim == 0 || dim % 2 != 0) {
        throw std::invalid_argument("sinusoidal_pe: dimension must be even and positive, got " + std::to_string(dim));
    }
    std::vector<double> p(dim);
    const double k = static_cast<double>(position);
    for (std::size_t l = 0; l < dim / 2; ++l) {
        const double w = std::pow(10000.0, -2.0 * static_cast<double>(l) / static_cast<double>(dim));
        p[2 * l] = std::sin(w * k);
        p[2 * l + 1] = std::cos(w * k);
    }
    return p;
}

SinusoidalPETable::SinusoidalPETable(std::size_t max_positions, std::size_t d_model)
    : max_positions_(max_positions), d_model_(d_model) {
    entries_.reserve(max_positions * d_model);
    for (std::size_t k = 0; k < max_positions; ++k) {
        auto p = sinusoidal_pe(k, d_model);
        entries_.insert(entries_.end(), p.begin(), p.end());
    }
}

std::span<const double> SinusoidalPETable::row(std::size_t position) const {
    if (position >= max_positions_) {
        throw std::out_of_range("SinusoidalPETable: position " + std::to_string(position) + " beyond table size " +
                                std::to_string(max_positions_));
    }
    return std::span<const double>(entries_).subspan(position * d_model_, d_model_);
}

void PatchGeometry::validate() const {
    if (image_size == 0 || patch_size == 0 || channels == 0) {
        throw std::invalid_argument("patch geometry: image size, patch size and channels must be positive");
    }
    if (image_size % patch_size != 0) {
        throw std::invalid_argument("patch geometry: image size " + std::to_string(image_size) +
                                    " is not divisible by patch size " + std::to_string(patch_size));
    }
}

std::vector<float> patchify(const Image& frame, const PatchGeometry& g) {
    g.validate();
    if (frame.height != g.image_size || frame.width != g.image_size || frame.channels != g.channels) {
        throw std::invalid_argument("patchify: frame is " + std::to_string(frame.height) + "x" +
                                    std::to_string(frame.width) + "x" + std::to_string(frame.channels) +
                                    ", expected " + std::to_string(g.image_size) + "x" +
                                    std::to_string(g.image_size) + "x" + std::to_string(g.channels));
    }
    const std::size_t q = g.grid_side();
    const std::size_t p = g.patch_size;
    std::vector<float> out;
    out.reserve(g.tokens_per_frame() * g.patch_dim());
    for (std::size_t u = 0; u < q; ++u) {
        for (std::size_t v = 0; v < q; ++v) {
            for (std::size_t py = 0; py < p; ++py) {
                for (std::size_t px = 0; px < p; ++px) {
                    for (std::size_t c = 0; c < g.channels; ++c) {
                        out.push_back(frame.at(u * p + py, v * p + px, c));
                    }
                }
            }
        }
    }
    return out;
}

Image unpatchify(std::span<const float> patches, const PatchGeometry& g) {
    g.validate();
    if (patches.size() != g.tokens_per_frame() * g.patch_dim()) {
        throw std::invalid_argument("unpatchify: expected " + std::to_string(g.tokens_per_frame() * g.patch_dim()) +
                                    " values, got " + std::to_string(patches.size()));
    }
    const std::size_t q = g.grid_side();
    const std::size_t p = g.patch_size;
    Image img(g.image_size, g.image_size, g.channels);
    std::size_t i = 0;
    for (std::size_t u = 0; u < q; ++u) {
        for (std::size_t v = 0; v < q; ++v) {
            for (std::size_t py = 0; py < p; ++py) {
                for (std::size_t px = 0; px < p; ++px) {
                    for (std::size_t c = 0; c < g.channels; ++c) {
                        img.at(u * p + py, v * p + px, c) = patches[i++];
                    }
                }
            }
        }
    }
    return img;
}

template <typename Real>
std::vector<Real> TimeAwareEncoding<Real>::initial_omega(std::size_t d_model) {
    std::vector<Real> w(d_model);
    for (std::size_t i = 0; i < d_model; ++i) {
        w[i] = static_cast<Real>(
            std::pow(10000.0, -2.0 * static_cast<double>(i / 2) / static_cast<double>(d_model)));
    }
    return w;
}

template <typename Real>
std::vector<Real> TimeAwareEncoding<Real>::initial_tau(std::size_t d_model) {
    // cos(x - pi/2) = sin(x): even dims start as sines, odd dims as cosines.
    std::vector<Real> t(d_model);
    for (std::size_t i = 0; i < d_model; ++i) {
        t[i] = i % 2 == 0 ? static_cast<Real>(-std::numbers::pi / 2.0) : Real{0};
    }
    return t;
}

template <typename Real>
TimeAwareEncoding<Real>::TimeAwareEncoding(ParameterSet<Real>& params, const std::string& prefix,
                                           std::size_t d_model) {
    omega_ = params.add(prefix + "omega", {d_model}, initial_omega(d_model));
    tau_ = params.add(prefix + "tau", {d_model}, initial_tau(d_model));
}

template <typename Real>
Tensor<Real> TimeAwareEncoding<Real>::encode(std::span<const double> times, double t0) const {
    static std::atomic<bool> warned{false};
    std::vector<Real> dt(times.size());
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (times[i] < t0 && !warned.exchange(true)) {
            std::clog << "warning: time-aware encoding evaluated before the sequence start (t < t0)\n";
        }
        dt[i] = static_cast<Real>(times[i] - t0);
    }
    const std::size_t d = d_model();
    auto dt_col = Tensor<Real>::from_data({times.size(), 1}, std::move(dt));
    auto phase = matmul(dt_col, reshape(omega_, {1, d}));
    return lmae::cos(add_bias(phase, tau_));
}

std::string format_pixel_norm(const PixelNorm& norm) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%a %a", norm.mean, norm.stddev);
    return buf;
}

PixelNorm parse_pixel_norm(std::string_view text) {
    const std::string s(text);
    PixelNorm norm;
    char* end = nullptr;
    norm.mean = std::strtod(s.c_str(), &end);
    const char* rest = end;
    norm.stddev = std::strtod(rest, &end);
    if (rest == s.c_str() || end == rest || !(norm.stddev > 0.0)) {
        throw std::invalid_argument("bad pixel normalization '" + s + "'");
    }
    return norm;
}

template <typename Real>
PatchEmbedder<Real>::PatchEmbedder(ParameterSet<Real>& params, const std::string& prefix,
                                   const PatchGeometry& geometry, std::size_t d_model, Rng& rng,
                                   PixelNorm input_norm)
    : geometry_(geometry), input_norm_(input_norm), d_model_(d_model) {
    geometry_.validate();
    if (!(input_norm_.stddev > 0.0) || !std::isfinite(input_norm_.mean)) {
        throw std::invalid_argument("patch embedding: input normalization needs a finite mean and positive stddev");
    }
    weight_ = params.add(prefix + "weight", {geometry_.patch_dim(), d_model},
                         init::truncated_normal_as<Real>(rng, geometry_.patch_dim() * d_model));
    bias_ = params.add(prefix + "bias", {d_model}, std::vector<Real>(d_model, Real{0}));
}

template <typename Real>
Tensor<Real> PatchEmbedder<Real>::project(const Tensor<Real>& patches) const {
    return add_bias(matmul(patches, weight_), bias_);
}

template <typename Real>
Tensor<Real> temporal_terms(std::span<const double> times, std::size_t d_model, TemporalVariant variant,
                            const TimeAwareEncoding<Real>* temporal) {
    switch (variant) {
        case TemporalVariant::empty:
            return {};
        case TemporalVariant::base: {
            std::vector<Real> rows;
            rows.reserve(times.size() * d_model);
            for (std::size_t f = 0; f < times.size(); ++f) {
                auto p = sinusoidal_pe(f, d_model);
                rows.insert(rows.end(), p.begin(), p.end());
            }
            return Tensor<Real>::from_data({times.size(), d_model}, std::move(rows));
        }
        case TemporalVariant::time_aware:
            if (temporal == nullptr) {
                throw std::invalid_argument("time_aware variant requires a TimeAwareEncoding");
            }
            return temporal->encode(times, times.front());
    }
    return {};
}

template <typename Real>
Tensor<Real> add_position_terms(const Tensor<Real>& tokens, std::span<const std::size_t> token_ids,
                                std::size_t tokens_per_frame, std::span<const double> times,
                                TemporalVariant variant, const TimeAwareEncoding<Real>* temporal) {
    if (tokens.rank() != 2 || tokens.dim(0) != token_ids.size()) {
        throw ShapeError("add_position_terms: tokens " + shape_to_string(tokens.shape()) + " vs " +
                         std::to_string(token_ids.size()) + " token ids");
    }
    if (times.empty()) {
        throw std::invalid_argument("add_position_terms: empty time list");
    }
    for (std::size_t i = 1; i < times.size(); ++i) {
        if (times[i] < times[i - 1]) {
            throw std::invalid_argument("add_position_terms: times must be nondecreasing");
        }
    }
    const std::size_t d = tokens.dim(1);
    std::vector<std::size_t> frame_of(token_ids.size());
    std::vector<Real> fixed(token_ids.size() * d);
    for (std::size_t k = 0; k < token_ids.size(); ++k) {
        const std::size_t frame = token_ids[k] / tokens_per_frame;
        if (frame >= times.size()) {
            throw std::invalid_argument("add_position_terms: token " + std::to_string(token_ids[k]) +
                                        " belongs to frame " + std::to_string(frame) + " but only " +
                                        std::to_string(times.size()) + " timestamps were given");
        }
        frame_of[k] = frame;
        auto spatial = sinusoidal_pe(token_ids[k] % tokens_per_frame, d);
        for (std::size_t j = 0; j < d; ++j) {
            fixed[k * d + j] = static_cast<Real>(spatial[j]);
        }
    }
    if (variant == TemporalVariant::base) {
        auto terms = temporal_terms<Real>(times, d, variant, temporal);
        auto td = terms.data();
        for (std::size_t k = 0; k < token_ids.size(); ++k) {
            for (std::size_t j = 0; j < d; ++j) {
                fixed[k * d + j] += td[frame_of[k] * d + j];
            }
        }
    }
    auto out = add(tokens, Tensor<Real>::from_data({token_ids.size(), d}, std::move(fixed)));
    if (variant == TemporalVariant::time_aware) {
        auto per_frame = temporal_terms<Real>(times, d, variant, temporal);
        out = add(out, gather_rows(per_frame, std::span<const std::size_t>(frame_of)));
    }
    return out;
}

template <typename Real>
Tensor<Real> embed_tokens(const PatchEmbedder<Real>& embedder, std::span<const float> patches,
                          std::span<const double> times, std::span<const std::size_t> token_ids,
                          TemporalVariant variant, const TimeAwareEncoding<Real>* temporal) {
    const auto& g = embedder.geometry();
    const std::size_t n_tok = g.tokens_per_frame();
    const std::size_t pd = g.patch_dim();
    if (patches.size() != times.size() * n_tok * pd) {
        throw std::invalid_argument("embed_tokens: " + std::to_string(patches.size() / (n_tok * pd)) +
                                    " frames of patches but " + std::to_string(times.size()) + " timestamps");
    }
    std::vector<Real> rows(token_ids.size() * pd);
    for (std::size_t k = 0; k < token_ids.size(); ++k) {
        if (token_ids[k] >= times.size() * n_tok) {
            throw std::out_of_range("embed_tokens: token id " + std::to_string(token_ids[k]) + " out of range");
        }
        for (std::size_t j = 0; j < pd; ++j) {
            rows[k * pd + j] = static_cast<Real>(patches[token_ids[k] * pd + j]);
        }
    }
    if (const auto& norm = embedder.input_norm(); !norm.identity()) {
        const auto mean = static_cast<Real>(norm.mean);
        const auto inv = static_cast<Real>(1.0 / norm.stddev);
        for (auto& v : rows) {
            v = (v - mean) * inv;
        }
    }
    auto projected = embedder.project(Tensor<Real>::from_data({token_ids.size(), pd}, std::move(rows)));
    return add_position_terms(projected, token_ids, n_tok, times, variant, temporal);
}

template <typename Real>
Tensor<Real> embed_sequence(const PatchEmbedder<Real>& embedder, std::span<const float> patches,
                            std::span<const double> times, TemporalVariant variant,
                            const TimeAwareEncoding<Real>* temporal) {
    std::vector<std::size_t> ids(times.size() * embedder.geometry().tokens_per_frame());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        ids[i] = i;
    }
    return embed_tokens(embedder, patches, times, ids, variant, temporal);
}

#define LMAE_INSTANTIATE_EMBEDDINGS(Real)                                                                        \
    template class TimeAwareEncoding<Real>;                                                                      \
    template class PatchEmbedder<Real>;                                                                          \
    template Tensor<Real> temporal_terms(std::span<const double>, std::size_t, TemporalVariant,                  \
                                         const TimeAwareEncoding<Real>*);                                        \
    template Tensor<Real> add_position_terms(const Tensor<Real>&, std::span<const std::size_t>, std::size_t,     \
                                             std::span<const double>, TemporalVariant,                           \
                                             const TimeAwareEncoding<Real>*);                                    \
    template Tensor<Real> embed_tokens(const PatchEmbedder<Real>&, std::span<const float>,                       \
                                       std::span<const double>, std::span<const std::size_t>, TemporalVariant,   \
                                       const TimeAwareEncoding<Real>*);                                          \
    template Tensor<Real> embed_sequence(const PatchEmbedder<Real>&, std::span<const float>,                     \
                                         std::span<const double>, TemporalVariant,                               \
                                         const TimeAwareEncoding<Real>*);

LMAE_INSTANTIATE_EMBEDDINGS(float)
LMAE_INSTANTIATE_EMBEDDINGS(double)

#undef LMAE_INSTANTIATE_EMBEDDINGS

}  // namespace lmae
