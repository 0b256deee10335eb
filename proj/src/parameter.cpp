#include "lmae/parameter.hpp"

#include <algorithm>
#include <stdexcept>

namespace lmae {

template <typename Real>
Tensor<Real> ParameterSet<Real>::add(std::string name, Shape shape, std::vector<Real> init) {
    if (find(name) != nullptr) {
        throw std::invalid_argument("parameter '" + name + "' registered twice");
    }
    auto value = Tensor<Real>::from_data(std::move(shape), std::move(init), true);
    Parameter<Real> p;
    p.name = std::move(name);
    p.value = value;
    p.first_moment.assign(value.numel(), Real{0});
    p.second_moment.assign(value.numel(), Real{0});
    params_.push_back(std::move(p));
    return value;
}

template <typename Real>
Parameter<Real>* ParameterSet<Real>::find(std::string_view name) {
    auto it = std::find_if(params_.begin(), params_.end(), [&](const auto& p) { return p.name == name; });
    return it == params_.end() ? nullptr : &*it;
}

template <typename Real>
const Parameter<Real>* ParameterSet<Real>::find(std::string_view name) const {
    auto it = std::find_if(params_.begin(), params_.end(), [&](const auto& p) { return p.name == name; });
    return it == params_.end() ? nullptr : &*it;
}

template <typename Real>
Parameter<Real>& ParameterSet<Real>::at(std::string_view name) {
    auto* p = find(name);
    if (p == nullptr) {
        throw std::out_of_range("no parameter named '" + std::string(name) + "'");
    }
    return *p;
}

template <typename Real>
std::size_t ParameterSet<Real>::scalar_count(std::string_view prefix) const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        if (p.name.starts_with(prefix)) {
            n += p.value.numel();
        }
    }
    return n;
}

template <typename Real>
void ParameterSet<Real>::zero_grad() {
    for (auto& p : params_) {
        p.value.zero_grad();
    }
}

template <typename Real>
typename ParameterSet<Real>::Snapshot ParameterSet<Real>::snapshot() const {
    Snapshot snap;
    snap.reserve(params_.size());
    for (const auto& p : params_) {
        snap.emplace_back(p.value.data().begin(), p.value.data().end());
    }
    return snap;
}

template <typename Real>
void ParameterSet<Real>::restore(const Snapshot& snap) {
    if (snap.size() != params_.size()) {
        throw std::invalid_argument("snapshot has " + std::to_string(snap.size()) + " tensors, expected " +
                                    std::to_string(params_.size()));
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto dst = params_[i].value.mutable_data();
        if (snap[i].size() != dst.size()) {
            throw std::invalid_argument("snapshot size mismatch for '" + params_[i].name + "'");
        }
        std::copy(snap[i].begin(), snap[i].end(), dst.begin());
    }
}

namespace init {

std::vector<double> truncated_normal(Rng& rng, std::size_t n, double stddev) {
    std::vector<double> v(n);
    for (auto& x : v) {
        x = rng.truncated_normal(stddev);
    }
    return v;
}

}  // namespace init

template class ParameterSet<float>;
template class ParameterSet<double>;

}  // namespace lmae
