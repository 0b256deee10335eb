#include "lmae/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "lmae/ops.hpp"

namespace lmae {

namespace {

constexpr const char* kBestPrefix = "best/";

std::string hex_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

double parse_hex_double(const std::string& s) {
    return std::strtod(s.c_str(), nullptr);
}

const std::string& meta(const Checkpoint& ckpt, const std::string& key) {
    auto it = ckpt.metadata.find(key);
    if (it == ckpt.metadata.end()) {
        throw std::out_of_range("checkpoint: missing train state key '" + key + "'");
    }
    return it->second;
}

}  // namespace

std::string_view to_string(Schedule s) {
    return s == Schedule::onecycle ? "onecycle" : "constant";
}

Schedule parse_schedule(std::string_view text) {
    if (text == "onecycle") {
        return Schedule::onecycle;
    }
    if (text == "constant") {
        return Schedule::constant;
    }
    throw std::invalid_argument("unknown schedule '" + std::string(text) + "' (expected constant or onecycle)");
}

void FitConfig::validate() const {
    if (batch_size == 0 || grad_accumulation == 0) {
        throw std::invalid_argument("fit: batch_size and grad_accumulation must be positive");
    }
    if (!(lr >= 0.0) || !std::isfinite(lr)) {
        throw std::invalid_argument("fit: learning rate must be finite and nonnegative");
    }
}

std::size_t FitConfig::steps_per_epoch(std::size_t n_train) const {
    const std::size_t batches = (n_train + batch_size - 1) / batch_size;
    return (batches + grad_accumulation - 1) / grad_accumulation;
}

double FitConfig::learning_rate(std::size_t step, std::size_t total_steps) const {
    if (schedule == Schedule::constant) {
        return lr;
    }
    OneCycleConfig c = onecycle;
    c.max_lr = lr;
    return onecycle_lr(std::min(step, total_steps), std::max<std::size_t>(total_steps, 1), c);
}

LossLog::LossLog(const std::filesystem::path& path, bool append) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    out_.open(path, std::ios::binary | (append ? std::ios::app : std::ios::trunc));
    if (!out_) {
        throw std::runtime_error("cannot open loss log " + path.string());
    }
}

void LossLog::write(std::size_t step, std::size_t epoch, std::string_view split, double loss, double lr) {
    if (!out_.is_open()) {
        return;
    }
    nlohmann::json j = {{"step", step}, {"epoch", epoch}, {"split", split}, {"lr", lr}};
    if (std::isfinite(loss)) {
        j["loss"] = loss;
    } else {
        j["loss"] = nullptr;
    }
    out_ << j.dump() << '\n';
    out_.flush();
}

template <typename Real>
FitResult<Real> fit(ParameterSet<Real>& params, std::size_t n_train, const BatchLossFn<Real>& batch_loss,
                    const ValidationFn& validation, const FitConfig& config, const Rng& root, LossLog* log,
                    const TrainState<Real>* resume, const EpochCallback<Real>& on_epoch_end) {
    config.validate();
    if (n_train == 0) {
        throw std::invalid_argument("fit: empty training set");
    }
    FitResult<Real> result;
    if (resume != nullptr) {
        result.state = *resume;
    }
    auto& st = result.state;
    const std::size_t total_steps = config.epochs * config.steps_per_epoch(n_train);
    const auto fallback = st.best.empty() ? params.snapshot() : st.best;
    params.zero_grad();

    auto abort = [&](std::string reason) {
        params.zero_grad();
        params.restore(st.best.empty() ? fallback : st.best);
        result.aborted = true;
        result.abort_reason = std::move(reason);
        return result;
    };

    for (; st.epoch < config.epochs; ) {
        const std::size_t epoch = st.epoch + 1;
        std::vector<std::size_t> order(n_train);
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle = root.substream("shuffle", st.epoch);
        for (std::size_t i = n_train - 1; i > 0; --i) {
            std::swap(order[i], order[static_cast<std::size_t>(shuffle.below(i + 1))]);
        }

        double epoch_sum = 0.0;
        std::size_t epoch_steps = 0;
        std::size_t pos = 0;
        while (pos < n_train) {
            double step_loss = 0.0;
            std::size_t micro = 0;
            for (; micro < config.grad_accumulation && pos < n_train; ++micro) {
                const std::size_t end = std::min(n_train, pos + config.batch_size);
                std::span<const std::size_t> items(order.data() + pos, end - pos);
                pos = end;
                auto loss = batch_loss(items, st.step);
                const double value = static_cast<double>(loss.item());
                if (!std::isfinite(value)) {
                    if (log != nullptr) {
                        log->write(st.step, epoch, "train", value, config.learning_rate(st.step, total_steps));
                    }
                    return abort("non-finite training loss at step " + std::to_string(st.step) + ", epoch " +
                                 std::to_string(epoch));
                }
                if (config.grad_accumulation > 1) {
                    loss = scale(loss, static_cast<Real>(1.0 / static_cast<double>(config.grad_accumulation)));
                }
                backward(loss);
                step_loss += value;
            }
            step_loss /= static_cast<double>(micro);
            const double lr = config.learning_rate(st.step, total_steps);
            try {
                adamw_step(params, lr, config.adamw);
            } catch (const NumericError& e) {
                return abort(e.what());
            }
            params.zero_grad();
            if (log != nullptr) {
                log->write(st.step, epoch, "train", step_loss, lr);
            }
            result.train_losses.push_back(step_loss);
            epoch_sum += step_loss;
            ++epoch_steps;
            ++st.step;
        }

        const double val = validation ? validation() : epoch_sum / static_cast<double>(epoch_steps);
        if (log != nullptr) {
            log->write(st.step, epoch, "val", val, config.learning_rate(st.step, total_steps));
        }
        if (!std::isfinite(val)) {
            return abort("non-finite validation loss after epoch " + std::to_string(epoch));
        }
        st.val_history.push_back(val);
        if (val < st.best_val) {
            st.best_val = val;
            st.best_epoch = epoch;
            st.best = params.snapshot();
        }
        st.epoch = epoch;
        if (on_epoch_end) {
            on_epoch_end(st);
        }
    }
    if (st.best.empty()) {
        st.best = params.snapshot();
    }
    params.restore(st.best);
    return result;
}

template <typename Real>
void store_train_state(Checkpoint& ckpt, const TrainState<Real>& state, const ParameterSet<Real>& params) {
    ckpt.metadata["train.step"] = std::to_string(state.step);
    ckpt.metadata["train.epoch"] = std::to_string(state.epoch);
    ckpt.metadata["train.best_epoch"] = std::to_string(state.best_epoch);
    ckpt.metadata["train.best_val"] = hex_double(state.best_val);
    nlohmann::json history = nlohmann::json::array();
    for (double v : state.val_history) {
        history.push_back(hex_double(v));
    }
    ckpt.metadata["train.val_history"] = history.dump();
    if (!state.best.empty()) {
        const auto& items = params.items();
        for (std::size_t i = 0; i < items.size(); ++i) {
            ckpt.put<Real>(kBestPrefix + items[i].name, items[i].value.shape(), state.best.at(i));
        }
    }
}

template <typename Real>
TrainState<Real> load_train_state(const Checkpoint& ckpt, const ParameterSet<Real>& params) {
    TrainState<Real> st;
    st.step = std::stoull(meta(ckpt, "train.step"));
    st.epoch = std::stoull(meta(ckpt, "train.epoch"));
    st.best_epoch = std::stoull(meta(ckpt, "train.best_epoch"));
    st.best_val = parse_hex_double(meta(ckpt, "train.best_val"));
    for (const auto& v : nlohmann::json::parse(meta(ckpt, "train.val_history"))) {
        st.val_history.push_back(parse_hex_double(v.get<std::string>()));
    }
    if (ckpt.has_prefix(kBestPrefix)) {
        for (const auto& p : params.items()) {
            const auto& e = ckpt.at(kBestPrefix + p.name);
            if (e.shape != p.value.shape()) {
                throw ShapeError("checkpoint: best snapshot of '" + p.name + "' has the wrong shape");
            }
            st.best.push_back(e.template as<Real>());
        }
    }
    return st;
}

template <typename Real>
double pretraining_loss(const LMAEModel<Real>& model, const std::vector<PatchSequence>& sequences,
                        const MaskConfig& mask, const Rng& mask_stream) {
    if (sequences.empty()) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    const std::size_t q = model.config().geometry.grid_side();
    double total = 0.0;
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        Rng rng = mask_stream.substream("sequence", i);
        const auto m = generate_mask(mask, q, sequences[i].grades, rng);
        total += static_cast<double>(model.loss(sequences[i], m).item());
    }
    return total / static_cast<double>(sequences.size());
}

template <typename Real>
FitResult<Real> fit_pretraining(LMAEModel<Real>& model, const std::vector<PatchSequence>& train,
                                const std::vector<PatchSequence>& val, const MaskConfig& mask,
                                const FitConfig& config, const Rng& root, LossLog* log,
                                const TrainState<Real>* resume, const EpochCallback<Real>& on_epoch_end) {
    mask.validate();
    const std::size_t q = model.config().geometry.grid_side();
    BatchLossFn<Real> batch_loss = [&](std::span<const std::size_t> items, std::size_t step) {
        Rng rng = root.substream("mask", step);
        Tensor<Real> total;
        for (std::size_t idx : items) {
            const auto m = generate_mask(mask, q, train[idx].grades, rng);
            auto l = model.loss(train[idx], m);
            total = total.defined() ? add(total, l) : l;
        }
        return scale(total, static_cast<Real>(1.0 / static_cast<double>(items.size())));
    };
    ValidationFn validation;
    if (!val.empty()) {
        validation = [&]() { return pretraining_loss(model, val, mask, root.substream("val_mask")); };
    }
    return fit(model.parameters(), train.size(), batch_loss, validation, config, root, log, resume, on_epoch_end);
}

template <typename Real>
double classification_loss_value(const ClassifierModel<Real>& model, const std::vector<LabeledSequence>& data) {
    if (data.empty()) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    double total = 0.0;
    for (const auto& d : data) {
        const FinetuneExample ex{&d.context, d.target};
        total += static_cast<double>(classification_loss(model, std::span<const FinetuneExample>(&ex, 1)).item());
    }
    return total / static_cast<double>(data.size());
}

template <typename Real>
FitResult<Real> fit_classifier(ClassifierModel<Real>& model, const std::vector<LabeledSequence>& train,
                               const std::vector<LabeledSequence>& val, const FitConfig& config, const Rng& root,
                               LossLog* log, const TrainState<Real>* resume, const EpochCallback<Real>& on_epoch_end) {
    BatchLossFn<Real> batch_loss = [&](std::span<const std::size_t> items, std::size_t) {
        std::vector<FinetuneExample> batch;
        batch.reserve(items.size());
        for (std::size_t idx : items) {
            batch.push_back({&train[idx].context, train[idx].target});
        }
        return classification_loss(model, std::span<const FinetuneExample>(batch));
    };
    ValidationFn validation;
    if (!val.empty()) {
        validation = [&]() { return classification_loss_value(model, val); };
    }
    return fit(model.parameters(), train.size(), batch_loss, validation, config, root, log, resume, on_epoch_end);
}

#define LMAE_INSTANTIATE_TRAIN(Real)                                                                              \
    template FitResult<Real> fit(ParameterSet<Real>&, std::size_t, const BatchLossFn<Real>&, const ValidationFn&, \
                                 const FitConfig&, const Rng&, LossLog*, const TrainState<Real>*,                 \
                                 const EpochCallback<Real>&);                                                     \
    template void store_train_state(Checkpoint&, const TrainState<Real>&, const ParameterSet<Real>&);             \
    template TrainState<Real> load_train_state(const Checkpoint&, const ParameterSet<Real>&);                     \
    template double pretraining_loss(const LMAEModel<Real>&, const std::vector<PatchSequence>&,                   \
                                     const MaskConfig&, const Rng&);                                              \
    template FitResult<Real> fit_pretraining(LMAEModel<Real>&, const std::vector<PatchSequence>&,                 \
                                             const std::vector<PatchSequence>&, const MaskConfig&,                \
                                             const FitConfig&, const Rng&, LossLog*, const TrainState<Real>*,     \
                                             const EpochCallback<Real>&);                                         \
    template double classification_loss_value(const ClassifierModel<Real>&, const std::vector<LabeledSequence>&); \
    template FitResult<Real> fit_classifier(ClassifierModel<Real>&, const std::vector<LabeledSequence>&,          \
                                            const std::vector<LabeledSequence>&, const FitConfig&, const Rng&,    \
                                            LossLog*, const TrainState<Real>*, const EpochCallback<Real>&);

LMAE_INSTANTIATE_TRAIN(float)
LMAE_INSTANTIATE_TRAIN(double)

#undef LMAE_INSTANTIATE_TRAIN

}  // namespace lmae
