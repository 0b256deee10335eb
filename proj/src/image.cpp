#include "lmae/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace lmae {
namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& is) {
    std::string tok;
    char c = 0;
    while (is.get(c)) {
        if (c == '#') {
            std::string ignored;
            std::getline(is, ignored);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!tok.empty()) {
                break;
            }
            continue;
        }
        tok.push_back(c);
    }
    return tok;
}

}  // namespace

float quantize8(float v) {
    return std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f;
}

Image read_pnm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("image: cannot open '" + path.string() + "'");
    }
    const auto magic = next_token(is);
    std::size_t channels = 0;
    if (magic == "P5") {
        channels = 1;
    } else if (magic == "P6") {
        channels = 3;
    } else {
        throw std::runtime_error("image: '" + path.string() + "' is not a binary PGM/PPM file");
    }
    std::size_t w = 0;
    std::size_t h = 0;
    int maxval = 0;
    try {
        w = std::stoul(next_token(is));
        h = std::stoul(next_token(is));
        maxval = std::stoi(next_token(is));
    } catch (const std::exception&) {
        throw std::runtime_error("image: malformed header in '" + path.string() + "'");
    }
    if (w == 0 || h == 0 || maxval != 255) {
        throw std::runtime_error("image: '" + path.string() + "' must be 8-bit with nonzero size");
    }
    Image img(h, w, channels);
    std::vector<unsigned char> raw(img.pixels.size());
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
        throw std::runtime_error("image: truncated pixel data in '" + path.string() + "'");
    }
    for (std::size_t i = 0; i < raw.size(); ++i) {
        img.pixels[i] = static_cast<float>(raw[i]) / 255.0f;
    }
    return img;
}

void write_pnm(const std::filesystem::path& path, const Image& image) {
    if (image.channels != 1 && image.channels != 3) {
        throw std::invalid_argument("image: only 1 or 3 channels can be written");
    }
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw std::runtime_error("image: cannot write '" + path.string() + "'");
    }
    os << (image.channels == 1 ? "P5" : "P6") << '\n' << image.width << ' ' << image.height << "\n255\n";
    std::vector<unsigned char> raw(image.pixels.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        raw[i] = static_cast<unsigned char>(std::lround(std::clamp(image.pixels[i], 0.0f, 1.0f) * 255.0f));
    }
    os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

}  // namespace lmae
