#include "lmae/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "lmae/embeddings.hpp"
#include "lmae/finetune.hpp"
#include "lmae/lmae.hpp"
#include "lmae/masking.hpp"
#include "lmae/ops.hpp"
#include "lmae/rng.hpp"
#include "lmae/vivit.hpp"

namespace lmae {

namespace {

using T = Tensor<double>;
using Inputs = std::vector<std::pair<std::string, T>>;

T random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0, bool grad = true) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) {
        x = rng.uniform(lo, hi);
    }
    return T::from_data(std::move(shape), std::move(v), grad);
}

/// Contracts an op output with fixed random weights so every output element matters.
T project(const T& out, Rng& rng) {
    auto w = random_tensor(rng, out.shape(), -1.0, 1.0, false);
    return sum(mul(out, w));
}

/// Redraws module parameters at O(1) scale. At the 0.02 init scale attention
/// logits are nearly zero and the q/k gradients drown in difference noise.
void randomize(ParameterSet<double>& params, Rng& rng) {
    for (auto& p : params.items()) {
        const bool gain = p.name.find("norm") != std::string::npos && p.name.ends_with(".weight");
        auto values = p.value.mutable_data();
        for (auto& v : values) {
            v = gain ? rng.uniform(0.5, 1.5) : rng.uniform(-0.5, 0.5);
        }
    }
}

double norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) {
        s += x * x;
    }
    return std::sqrt(s);
}

}  // namespace

double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric, double floor) {
    std::vector<double> diff(analytic.size());
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff[i] = analytic[i] - numeric.at(i);
    }
    return norm(diff) / std::max({norm(analytic), norm(numeric), floor});
}

GradCheckResult check_gradients(const std::string& name, const std::function<T()>& loss, const Inputs& inputs,
                                double tolerance, double step) {
    GradCheckResult result;
    result.name = name;
    Inputs handles = inputs;  // shares nodes; non-const for in-place perturbation
    for (auto& [label, t] : handles) {
        t.zero_grad();
    }
    backward(loss());
    std::vector<std::vector<double>> analytic;
    std::vector<std::vector<double>> numeric;
    double total = 0.0;
    for (auto& [label, t] : handles) {
        const auto g = t.grad();
        std::vector<double> a(g.begin(), g.end());
        if (a.empty()) {
            a.assign(t.numel(), 0.0);
        }
        std::vector<double> n(t.numel());
        auto values = t.mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double orig = values[i];
            values[i] = orig + step;
            const double up = loss().item();
            values[i] = orig - step;
            const double down = loss().item();
            values[i] = orig;
            n[i] = (up - down) / (2.0 * step);
        }
        total += std::pow(norm(a), 2.0);
        analytic.push_back(std::move(a));
        numeric.push_back(std::move(n));
        t.zero_grad();
    }
    const double floor = std::max(kGradCheckFloor * std::sqrt(total), 1e-8);
    for (std::size_t k = 0; k < handles.size(); ++k) {
        const double err = relative_error(analytic[k], numeric[k], floor);
        if (err >= result.max_rel_error) {
            result.max_rel_error = err;
            result.worst_input = handles[k].first;
        }
    }
    result.passed = std::isfinite(result.max_rel_error) && result.max_rel_error <= tolerance;
    return result;
}

std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, double tolerance) {
    std::vector<GradCheckResult> out;
    const Rng root = Rng(seed).substream("gradcheck");
    auto add_check = [&](const std::string& name, const std::function<T(Rng&)>& make_loss, const Inputs& inputs) {
        // Each evaluation must see the same projection weights.
        const Rng stream = root.substream(name);
        out.push_back(check_gradients(
            name,
            [&]() {
                Rng r = stream;
                return make_loss(r);
            },
            inputs, tolerance));
    };
    Rng rng = root.substream("inputs");

    {
        auto a = random_tensor(rng, {3, 4});
        auto b = random_tensor(rng, {4, 5});
        add_check("matmul", [&](Rng& r) { return project(matmul(a, b), r); }, {{"a", a}, {"b", b}});
        auto ba = random_tensor(rng, {2, 3, 4});
        auto bb = random_tensor(rng, {2, 4, 3});
        add_check("matmul_batched", [&](Rng& r) { return project(matmul(ba, bb), r); }, {{"a", ba}, {"b", bb}});
    }
    {
        auto a = random_tensor(rng, {3, 4});
        auto b = random_tensor(rng, {3, 4});
        add_check("add", [&](Rng& r) { return project(add(a, b), r); }, {{"a", a}, {"b", b}});
        add_check("sub", [&](Rng& r) { return project(sub(a, b), r); }, {{"a", a}, {"b", b}});
        add_check("mul", [&](Rng& r) { return project(mul(a, b), r); }, {{"a", a}, {"b", b}});
        add_check("scale", [&](Rng& r) { return project(scale(a, -1.7), r); }, {{"a", a}});
        auto bias = random_tensor(rng, {4});
        add_check("add_bias", [&](Rng& r) { return project(add_bias(a, bias), r); }, {{"x", a}, {"bias", bias}});
        add_check("reshape", [&](Rng& r) { return project(reshape(a, {2, 6}), r); }, {{"x", a}});
        add_check("transpose", [&](Rng& r) { return project(transpose(a), r); }, {{"x", a}});
        add_check("square", [&](Rng& r) { return project(square(a), r); }, {{"x", a}});
        add_check("cos", [&](Rng& r) { return project(lmae::cos(a), r); }, {{"x", a}});
        add_check("gelu", [&](Rng& r) { return project(gelu(scale(a, 3.0)), r); }, {{"x", a}});
        add_check("sum", [&](Rng&) { return sum(square(a)); }, {{"x", a}});
        add_check("mean", [&](Rng&) { return mean(square(a)); }, {{"x", a}});
        add_check("sum_axis", [&](Rng& r) { return project(sum_axis(a, 0), r); }, {{"x", a}});
        add_check("mean_axis", [&](Rng& r) { return project(mean_axis(a, 1), r); }, {{"x", a}});
        add_check("softmax_rows", [&](Rng& r) { return project(softmax(a, 1), r); }, {{"x", a}});
        add_check("softmax_cols", [&](Rng& r) { return project(softmax(a, 0), r); }, {{"x", a}});
        auto gamma = random_tensor(rng, {4}, 0.5, 1.5);
        auto beta = random_tensor(rng, {4});
        add_check("layer_norm", [&](Rng& r) { return project(layer_norm(a, gamma, beta), r); },
                  {{"x", a}, {"gamma", gamma}, {"beta", beta}});
        const std::vector<std::size_t> rows{2, 0, 2, 1};
        add_check("gather_rows", [&](Rng& r) { return project(gather_rows(a, std::span<const std::size_t>(rows)), r); },
                  {{"x", a}});
        const std::vector<std::size_t> dest{4, 1, 0};
        add_check("scatter_rows",
                  [&](Rng& r) { return project(scatter_rows(a, std::span<const std::size_t>(dest), 5), r); },
                  {{"x", a}});
        add_check("concat_rows", [&](Rng& r) { return project(concat_rows(std::vector<T>{a, b}), r); },
                  {{"a", a}, {"b", b}});
        const std::vector<int> targets{4, 0, 2};
        auto logits = random_tensor(rng, {3, 5}, -2.0, 2.0);
        add_check("cross_entropy", [&](Rng&) { return cross_entropy(logits, std::span<const int>(targets)); },
                  {{"logits", logits}});
    }
    {
        auto x = random_tensor(rng, {2, 3, 4});
        add_check("permute", [&](Rng& r) { return project(permute(x, {2, 0, 1}), r); }, {{"x", x}});
        add_check("softmax_3d", [&](Rng& r) { return project(softmax(x, 2), r); }, {{"x", x}});
    }

    // Modules.
    {
        ParameterSet<double> params;
        TimeAwareEncoding<double> enc(params, "t.", 6);
        const std::vector<double> times{0.3, 1.1, 2.9};
        Inputs in;
        for (auto& p : params.items()) {
            in.emplace_back(p.name, p.value);
        }
        add_check("time_aware_encoding", [&](Rng& r) { return project(enc.encode(times, 0.3), r); }, in);
    }
    {
        ParameterSet<double> params;
        Rng init = root.substream("init_encoder");
        TransformerEncoder<double> encoder(params, "enc.", TransformerConfig{2, 2, 8, 16}, init);
        randomize(params, init);
        auto tokens = random_tensor(rng, {4, 8});
        Inputs in{{"tokens", tokens}};
        for (auto& p : params.items()) {
            in.emplace_back(p.name, p.value);
        }
        add_check("transformer_encoder", [&](Rng& r) { return project(encoder.forward(tokens), r); }, in);
    }

    const PatchGeometry geometry{8, 4, 1};
    auto make_sequence = [&](std::size_t frames) {
        PatchSequence seq;
        for (std::size_t f = 0; f < frames; ++f) {
            Image img(8, 8, 1);
            for (auto& v : img.pixels) {
                v = static_cast<float>(rng.uniform());
            }
            auto rows = patchify(img, geometry);
            seq.patches.insert(seq.patches.end(), rows.begin(), rows.end());
            seq.times.push_back(0.7 * static_cast<double>(f) + 0.2);
            seq.grades.push_back(static_cast<int>(f % 5));
        }
        return seq;
    };
    {
        LMAEConfig cfg;
        cfg.geometry = geometry;
        cfg.frames = 2;
        cfg.encoder = {2, 2, 16, 32};
        cfg.decoder = {1, 2, 8, 16};
        cfg.temporal = TemporalVariant::time_aware;
        Rng init = root.substream("init_lmae");
        LMAEModel<double> model(cfg, init);
        randomize(model.parameters(), init);
        const auto seq = make_sequence(2);
        Rng mask_rng = root.substream("mask");
        const auto mask = random_mask(geometry.grid_side(), 2, 0.5, mask_rng);
        Inputs in;
        for (auto& p : model.parameters().items()) {
            in.emplace_back(p.name, p.value);
        }
        add_check("lmae_end_to_end", [&](Rng&) { return model.loss(seq, mask); }, in);
    }
    {
        ClassifierConfig cfg{geometry, 2, {1, 2, 8, 16}, TemporalVariant::time_aware};
        Rng init = root.substream("init_classifier");
        ClassifierModel<double> model(cfg, init);
        randomize(model.parameters(), init);
        const auto seq = make_sequence(2);
        const std::vector<FinetuneExample> batch{{&seq, 3}};
        Inputs in;
        for (auto& p : model.parameters().items()) {
            in.emplace_back(p.name, p.value);
        }
        add_check("classifier",
                  [&](Rng&) { return classification_loss(model, std::span<const FinetuneExample>(batch)); }, in);
    }
    return out;
}

}  // namespace lmae
