#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "lmae/rng.hpp"
#include "lmae/tensor.hpp"

namespace lmae {

template <typename Real>
struct Parameter {
    std::string name;
    Tensor<Real> value;  // leaf with requires_grad; its grad buffer is the accumulator
    std::vector<Real> first_moment;
    std::vector<Real> second_moment;
    std::uint64_t step = 0;
};

/// Named, ordered collection of learnable tensors. Names are unique.
template <typename Real>
class ParameterSet {
public:
    using Snapshot = std::vector<std::vector<Real>>;

    /// Registers a parameter and returns the tensor handle modules keep.
    Tensor<Real> add(std::string name, Shape shape, std::vector<Real> init);

    [[nodiscard]] Parameter<Real>* find(std::string_view name);
    [[nodiscard]] const Parameter<Real>* find(std::string_view name) const;
    [[nodiscard]] Parameter<Real>& at(std::string_view name);

    [[nodiscard]] std::vector<Parameter<Real>>& items() noexcept { return params_; }
    [[nodiscard]] const std::vector<Parameter<Real>>& items() const noexcept { return params_; }
    [[nodiscard]] std::size_t size() const noexcept { return params_.size(); }

    /// Total scalar count, optionally restricted to names starting with `prefix`.
    [[nodiscard]] std::size_t scalar_count(std::string_view prefix = {}) const;

    void zero_grad();

    [[nodiscard]] Snapshot snapshot() const;
    void restore(const Snapshot& snap);

private:
    std::vector<Parameter<Real>> params_;
};

namespace init {

std::vector<double> truncated_normal(Rng& rng, std::size_t n, double stddev = 0.02);

template <typename Real>
std::vector<Real> truncated_normal_as(Rng& rng, std::size_t n, double stddev = 0.02) {
    auto v = truncated_normal(rng, n, stddev);
    return {v.begin(), v.end()};
}

}  // namespace init

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;

}  // namespace lmae
