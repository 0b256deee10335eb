#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace lmae {

/// H x W x C image, row-major, channel-interleaved, values in [0, 1].
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 1;
    std::vector<float> pixels;

    Image() = default;
    Image(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f)
        : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

    float& at(std::size_t y, std::size_t x, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }
    [[nodiscard]] float at(std::size_t y, std::size_t x, std::size_t c = 0) const {
        return pixels[(y * width + x) * channels + c];
    }
};

/// 8-bit binary PGM (P5, one channel) or PPM (P6, three channels).
Image read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Image& image);

/// Rounds to the 8-bit grid used by write_pnm.
float quantize8(float v);

}  // namespace lmae
