#pragma once

// Epoch loop shared by pretraining and fine-tuning: per-epoch shuffling from
// a named substream, mini-batches with optional gradient accumulation, the
// learning-rate schedule, per-epoch validation with best-snapshot retention,
// and a JSONL loss log.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "lmae/checkpoint.hpp"
#include "lmae/finetune.hpp"
#include "lmae/lmae.hpp"
#include "lmae/optim.hpp"
#include "lmae/parameter.hpp"
#include "lmae/rng.hpp"

namespace lmae {

enum class Schedule { constant, onecycle };

std::string_view to_string(Schedule s);
Schedule parse_schedule(std::string_view text);

struct FitConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 8;
    /// Micro-batches summed per optimizer step.
    std::size_t grad_accumulation = 1;
    /// Constant rate, or the peak of the one-cycle schedule.
    double lr = kFinetuneLearningRate;
    Schedule schedule = Schedule::constant;
    OneCycleConfig onecycle;  // max_lr is taken from `lr`
    AdamWConfig adamw;

    void validate() const;
    [[nodiscard]] std::size_t steps_per_epoch(std::size_t n_train) const;
    [[nodiscard]] double learning_rate(std::size_t step, std::size_t total_steps) const;
};

template <typename Real>
struct TrainState {
    std::size_t step = 0;   // optimizer steps taken
    std::size_t epoch = 0;  // epochs completed
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;  // 1-based; 0 = no epoch evaluated yet
    std::vector<double> val_history;
    typename ParameterSet<Real>::Snapshot best;
};

template <typename Real>
struct FitResult {
    TrainState<Real> state;
    bool aborted = false;
    std::string abort_reason;
    std::vector<double> train_losses;  // per optimizer step, this call only
};

/// JSONL records {"step","epoch","split","loss","lr"}.
class LossLog {
public:
    LossLog() = default;
    explicit LossLog(const std::filesystem::path& path, bool append = false);

    void write(std::size_t step, std::size_t epoch, std::string_view split, double loss, double lr);
    [[nodiscard]] bool is_open() const { return out_.is_open(); }

private:
    std::ofstream out_;
};

/// Builds the mean loss of the given training items as a graph.
template <typename Real>
using BatchLossFn = std::function<Tensor<Real>(std::span<const std::size_t> items, std::size_t step)>;
using ValidationFn = std::function<double()>;
template <typename Real>
using EpochCallback = std::function<void(const TrainState<Real>&)>;

/// Trains for the configured epochs, continuing from `resume` if given. On
/// return the parameters hold the snapshot with the lowest validation loss
/// (the initial weights when no epoch ran). A non-finite training or
/// validation loss stops training and restores that snapshot.
template <typename Real>
FitResult<Real> fit(ParameterSet<Real>& params, std::size_t n_train, const BatchLossFn<Real>& batch_loss,
                    const ValidationFn& validation, const FitConfig& config, const Rng& root, LossLog* log = nullptr,
                    const TrainState<Real>* resume = nullptr, const EpochCallback<Real>& on_epoch_end = {});

/// Train-state metadata plus the best snapshot under "best/<name>".
template <typename Real>
void store_train_state(Checkpoint& ckpt, const TrainState<Real>& state, const ParameterSet<Real>& params);
template <typename Real>
TrainState<Real> load_train_state(const Checkpoint& ckpt, const ParameterSet<Real>& params);

/// Pretraining over patch sequences. Masks for step s are drawn from
/// root.substream("mask", s); validation masks are fixed per sequence.
template <typename Real>
FitResult<Real> fit_pretraining(LMAEModel<Real>& model, const std::vector<PatchSequence>& train,
                                const std::vector<PatchSequence>& val, const MaskConfig& mask,
                                const FitConfig& config, const Rng& root, LossLog* log = nullptr,
                                const TrainState<Real>* resume = nullptr,
                                const EpochCallback<Real>& on_epoch_end = {});

/// Mean pretraining loss over sequences with masks from `mask_stream`.
template <typename Real>
double pretraining_loss(const LMAEModel<Real>& model, const std::vector<PatchSequence>& sequences,
                        const MaskConfig& mask, const Rng& mask_stream);

struct LabeledSequence {
    PatchSequence context;
    int target = 0;
};

/// Cross-entropy fine-tuning.
template <typename Real>
FitResult<Real> fit_classifier(ClassifierModel<Real>& model, const std::vector<LabeledSequence>& train,
                               const std::vector<LabeledSequence>& val, const FitConfig& config, const Rng& root,
                               LossLog* log = nullptr, const TrainState<Real>* resume = nullptr,
                               const EpochCallback<Real>& on_epoch_end = {});

template <typename Real>
double classification_loss_value(const ClassifierModel<Real>& model, const std::vector<LabeledSequence>& data);

}  // namespace lmae
