#pragma once

// Next-visit severity classifier: the pretraining encoder path (patch
// embedding, temporal code, transformer) over all tokens, mean pooling, and
// an MLP head with one GELU hidden layer emitting 5 logits.

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lmae/checkpoint.hpp"
#include "lmae/lmae.hpp"

namespace lmae {

inline constexpr std::size_t kNumGrades = 5;
inline constexpr const char* kClassifierPrefix = "classifier.";
inline constexpr double kFinetuneLearningRate = 1e-3;
inline constexpr double kFinetuneWeightDecay = 1e-4;

/// Which pretrained groups are transferred; the rest keep their fresh init.
struct InitPolicy {
    bool use_embedding_layer = true;
    bool use_temporal_embedding = true;
    bool use_encoder_weights = true;

    [[nodiscard]] bool any() const { return use_embedding_layer || use_temporal_embedding || use_encoder_weights; }
    /// "E", "T", "W" letters for selected groups, "-" when none.
    [[nodiscard]] std::string label() const;
    /// All 8 combinations, all-false first, all-true last.
    static std::array<InitPolicy, 8> all();

    friend bool operator==(const InitPolicy&, const InitPolicy&) = default;
};

struct ClassifierConfig {
    PatchGeometry geometry;
    std::size_t frames = 3;
    TransformerConfig encoder{4, 4, 64, 256};
    TemporalVariant temporal = TemporalVariant::time_aware;
    PixelNorm input_norm;

    static ClassifierConfig from(const LMAEConfig& pretrain);
    void validate() const;
};

template <typename Real>
class ClassifierModel {
public:
    ClassifierModel(const ClassifierConfig& config, Rng& init_rng);
    ClassifierModel(const ClassifierModel&) = delete;
    ClassifierModel& operator=(const ClassifierModel&) = delete;
    ClassifierModel(ClassifierModel&&) noexcept = default;
    ClassifierModel& operator=(ClassifierModel&&) noexcept = default;

    /// Encoder output over every token of the sequence: [frames * N, D].
    [[nodiscard]] Tensor<Real> encode(const PatchSequence& sequence) const;
    /// [1, 5] unnormalized scores.
    [[nodiscard]] Tensor<Real> logits(const PatchSequence& sequence) const;

    [[nodiscard]] const ClassifierConfig& config() const { return config_; }
    [[nodiscard]] ParameterSet<Real>& parameters() { return params_; }
    [[nodiscard]] const ParameterSet<Real>& parameters() const { return params_; }

private:
    ClassifierConfig config_;
    ParameterSet<Real> params_;
    PatchEmbedder<Real> embed_;
    TimeAwareEncoding<Real> temporal_;
    TransformerEncoder<Real> encoder_;
    Tensor<Real> fc1_weight_, fc1_bias_, fc2_weight_, fc2_bias_;
};

/// Copies the groups selected by `policy` from a pretraining checkpoint,
/// bit-exactly. A selected group that has parameters in the model but no
/// entries in the checkpoint is an error.
template <typename Real>
void load_pretrained(ClassifierModel<Real>& model, const Checkpoint& checkpoint, const InitPolicy& policy);

/// Softmax over the 5 grades.
template <typename Real>
std::array<double, kNumGrades> predict_next(const ClassifierModel<Real>& model, const PatchSequence& context);

struct FinetuneExample {
    const PatchSequence* context = nullptr;
    int target = 0;
};

/// Mean cross-entropy over the examples as a graph (no update).
template <typename Real>
Tensor<Real> classification_loss(const ClassifierModel<Real>& model, std::span<const FinetuneExample> batch);

/// One cross-entropy AdamW step; returns the batch loss.
template <typename Real>
double finetune_step(ClassifierModel<Real>& model, std::span<const FinetuneExample> batch, double lr,
                     const AdamWConfig& adamw);

}  // namespace lmae
