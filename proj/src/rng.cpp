#include "lmae/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace lmae {

double Rng::normal() noexcept {
    // Box-Muller; the second variate is discarded so the stream position
    // depends only on the number of calls.
    double u1 = uniform();
    while (u1 <= 0.0) {
        u1 = uniform();
    }
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::truncated_normal(double stddev) noexcept {
    double z = normal();
    while (std::abs(z) > 2.0) {
        z = normal();
    }
    return z * stddev;
}

std::string Rng::serialize() const {
    std::ostringstream os;
    os << state_[0] << ' ' << state_[1] << ' ' << state_[2] << ' ' << state_[3];
    return os.str();
}

Rng Rng::deserialize(std::string_view text) {
    std::istringstream is{std::string(text)};
    State s{};
    for (auto& v : s) {
        if (!(is >> v)) {
            throw std::invalid_argument("rng state: expected four unsigned integers, got '" + std::string(text) + "'");
        }
    }
    Rng r;
    r.set_state(s);
    return r;
}

}  // namespace lmae
