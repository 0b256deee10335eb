#pragma once

// Next-visit evaluation (Mild+ / Moderate+ / Severe+ AUCs from 5-class
// outputs) and the pretrain -> finetune -> evaluate ablation grid.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmae/data.hpp"
#include "lmae/finetune.hpp"
#include "lmae/masking.hpp"
#include "lmae/train.hpp"

namespace lmae {

/// Mann-Whitney AUC: P(score+ > score-) + P(tie) / 2. Empty when only one
/// class is present. Exact pair counting up to 10^4 samples, ranks beyond.
std::optional<double> auc(std::span<const double> scores, std::span<const int> labels);

/// Probability mass on grades >= threshold.
double threshold_score(std::span<const double> probs, int threshold);

struct ThresholdTask {
    const char* name;
    int threshold;
};
inline constexpr std::array<ThresholdTask, 3> kThresholdTasks{
    {{"mild_plus", 1}, {"moderate_plus", 2}, {"severe_plus", 3}}};

struct TaskMetrics {
    std::optional<double> auc;
    std::size_t positives = 0;
    std::size_t negatives = 0;
};

struct EvalReport {
    std::array<TaskMetrics, 3> tasks;  // order of kThresholdTasks
    std::size_t samples = 0;
    std::string unit = "window";
    std::string fingerprint;

    [[nodiscard]] const TaskMetrics& mild_plus() const { return tasks[0]; }
    [[nodiscard]] const TaskMetrics& moderate_plus() const { return tasks[1]; }
    [[nodiscard]] const TaskMetrics& severe_plus() const { return tasks[2]; }
    [[nodiscard]] nlohmann::json to_json() const;
};

EvalReport evaluate_predictions(const std::vector<std::array<double, kNumGrades>>& probs,
                                std::span<const int> targets);

template <typename Real>
EvalReport evaluate(const ClassifierModel<Real>& model, const std::vector<LabeledSequence>& data);

// ---------------------------------------------------------------------------
// Experiment grid

struct PipelineConfig {
    SyntheticGenConfig data;
    /// Real data instead of the generator when set.
    std::filesystem::path manifest;
    SplitFractions split;
    std::size_t context_frames = kDefaultContextFrames;
    double horizon_years = kDefaultHorizonYears;
    std::size_t channels = 1;
    std::size_t d_model = 64;
    std::size_t depth = 4;
    std::size_t heads = 4;
    bool normalize_target = false;
    KernelVariant kernel = KernelVariant::isotropic;
    FitConfig pretrain = default_pretrain_fit();
    FitConfig finetune = default_finetune_fit();
    std::uint64_t seed = 0;

    static FitConfig default_pretrain_fit();
    static FitConfig default_finetune_fit();
    [[nodiscard]] PatchGeometry geometry() const;
    [[nodiscard]] LMAEConfig lmae_config(TemporalVariant temporal, PixelNorm input_norm = {}) const;
    [[nodiscard]] nlohmann::json to_json() const;
};

/// Train/val/test windows plus unlabeled training contexts for pretraining.
struct PreparedData {
    PatchGeometry geometry;
    /// Pixel mean and standard deviation over every training-split image.
    PixelNorm input_norm;
    std::vector<LabeledSequence> train;
    std::vector<LabeledSequence> val;
    std::vector<LabeledSequence> test;
    std::vector<PatchSequence> pretrain_train;  // every run of context_frames visits
    std::vector<PatchSequence> pretrain_val;
};

/// Every contiguous run of `length` visits of every sequence.
std::vector<PatchSequence> contiguous_runs(const std::vector<SequenceRecord>& records, std::size_t length,
                                           const PatchGeometry& geometry);

PixelNorm pixel_statistics(const std::vector<SequenceRecord>& records);

PreparedData prepare_data(const std::vector<SequenceRecord>& records, const PipelineConfig& config);
/// Loads the manifest or runs the generator (seeded by config.seed), then prepares.
PreparedData load_pipeline_data(const PipelineConfig& config);

struct GridCell {
    /// No pretraining when empty.
    std::optional<MaskConfig> mask;
    TemporalVariant temporal = TemporalVariant::time_aware;
    InitPolicy policy;

    [[nodiscard]] std::string strategy_label() const;
    [[nodiscard]] std::string id() const;
};

/// Named grids: "table2" (18 cells), "table3" (8 init policies),
/// "table4" (4 masking strategies), "full" (every strategy x temporal
/// variant), "trend" (temporal variants under prog_aware r = 0.75),
/// "scratch" (no pretraining, 3 temporal variants).
std::vector<GridCell> grid_preset(std::string_view name);

struct CellResult {
    GridCell cell;
    std::uint64_t seed = 0;
    std::optional<EvalReport> report;
    std::optional<double> pretrain_best_val;
    double finetune_best_val = 0.0;
    std::string error;

    [[nodiscard]] nlohmann::json to_json(const PipelineConfig& config) const;
};

struct ExperimentConfig {
    PipelineConfig pipeline;
    std::vector<GridCell> cells;
    std::vector<std::uint64_t> seeds{0};
    std::size_t workers = 1;
    /// Optional per-cell loss logs are written below this directory.
    std::filesystem::path log_dir;
};

/// Pretrains an LMAE model and returns its best checkpoint.
Checkpoint run_pretraining(const PipelineConfig& config, const PreparedData& data, const MaskConfig& mask,
                           TemporalVariant temporal, LossLog* log = nullptr);

/// Fine-tunes from `pretrained` (may be null for scratch) under the cell's
/// policy and evaluates on the test windows.
CellResult run_cell(const PipelineConfig& config, const PreparedData& data, const GridCell& cell,
                    const Checkpoint* pretrained, LossLog* log = nullptr);

/// Runs every (seed, cell) pair; pretraining is shared between cells that
/// differ only in InitPolicy. Failures are recorded per cell.
std::vector<CellResult> run_experiment(const ExperimentConfig& config);

void write_results_jsonl(std::ostream& os, const std::vector<CellResult>& results, const PipelineConfig& config);
std::string render_results_table(const std::vector<CellResult>& results);

}  // namespace lmae
