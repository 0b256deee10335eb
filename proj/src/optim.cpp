#include "lmae/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace lmae {

template <typename Real>
void adamw_step(ParameterSet<Real>& params, double lr, const AdamWConfig& config) {
    for (const auto& p : params.items()) {
        for (auto g : p.value.grad()) {
            if (!std::isfinite(static_cast<double>(g))) {
                throw NumericError("adamw: non-finite gradient in parameter '" + p.name + "'");
            }
        }
    }
    const double decay = 1.0 - lr * config.weight_decay;
    for (auto& p : params.items()) {
        if (!p.value.has_grad()) {
            continue;
        }
        ++p.step;
        const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(p.step));
        const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(p.step));
        auto w = p.value.mutable_data();
        auto g = p.value.grad();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i];
            const double m = config.beta1 * p.first_moment[i] + (1.0 - config.beta1) * gi;
            const double v = config.beta2 * p.second_moment[i] + (1.0 - config.beta2) * gi * gi;
            p.first_moment[i] = static_cast<Real>(m);
            p.second_moment[i] = static_cast<Real>(v);
            const double m_hat = m / bc1;
            const double v_hat = v / bc2;
            double wi = static_cast<double>(w[i]) * decay;
            wi -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
            w[i] = static_cast<Real>(wi);
        }
    }
}

double onecycle_lr(std::size_t step, std::size_t total_steps, const OneCycleConfig& config) {
    if (total_steps == 0) {
        throw std::invalid_argument("onecycle_lr: total_steps must be positive");
    }
    if (step > total_steps) {
        throw std::out_of_range("onecycle_lr: step " + std::to_string(step) + " beyond total " +
                                std::to_string(total_steps));
    }
    const double initial = config.max_lr / config.start_div;
    const double final_lr = config.max_lr / config.final_div;
    const double peak = std::round(config.pct_start * static_cast<double>(total_steps));
    const double s = static_cast<double>(step);

    // w runs from 1 at the phase start to 0 at the phase end; writing the
    // blend as start*w + end*(1-w) makes both endpoints exact.
    auto blend = [](double from, double to, double pct) {
        const double w = 0.5 * (1.0 + std::cos(std::numbers::pi * pct));
        return from * w + to * (1.0 - w);
    };
    if (s <= peak) {
        return peak <= 0.0 ? config.max_lr : blend(initial, config.max_lr, s / peak);
    }
    const double span = static_cast<double>(total_steps) - peak;
    return blend(config.max_lr, final_lr, (s - peak) / span);
}

template void adamw_step<float>(ParameterSet<float>&, double, const AdamWConfig&);
template void adamw_step<double>(ParameterSet<double>&, double, const AdamWConfig&);

}  // namespace lmae
