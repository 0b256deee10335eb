#include "lmae/finetune.hpp"

#include <cmath>
#include <stdexcept>

#include "lmae/ops.hpp"

namespace lmae {

std::string InitPolicy::label() const {
    std::string s;
    if (use_embedding_layer) {
        s += 'E';
    }
    if (use_temporal_embedding) {
        s += 'T';
    }
    if (use_encoder_weights) {
        s += 'W';
    }
    return s.empty() ? "-" : s;
}

std::array<InitPolicy, 8> InitPolicy::all() {
    std::array<InitPolicy, 8> out{};
    for (unsigned bits = 0; bits < 8; ++bits) {
        out[bits] = {(bits & 4U) != 0, (bits & 2U) != 0, (bits & 1U) != 0};
    }
    return out;
}

ClassifierConfig ClassifierConfig::from(const LMAEConfig& pretrain) {
    return {pretrain.geometry, pretrain.frames, pretrain.encoder, pretrain.temporal, pretrain.input_norm};
}

void ClassifierConfig::validate() const {
    geometry.validate();
    if (frames == 0) {
        throw std::invalid_argument("classifier: frames must be positive");
    }
    encoder.validate();
}

template <typename Real>
ClassifierModel<Real>::ClassifierModel(const ClassifierConfig& config, Rng& init_rng) : config_(config) {
    config_.validate();
    const std::size_t d = config_.encoder.d_model;
    embed_ = PatchEmbedder<Real>(params_, kPatchEmbedPrefix, config_.geometry, d, init_rng, config_.input_norm);
    if (config_.temporal == TemporalVariant::time_aware) {
        temporal_ = TimeAwareEncoding<Real>(params_, kTemporalEmbedPrefix, d);
    }
    encoder_ = TransformerEncoder<Real>(params_, kEncoderPrefix, config_.encoder, init_rng);
    const std::string head = kClassifierPrefix;
    std::tie(fc1_weight_, fc1_bias_) = add_linear(params_, head + "fc1.", d, d, init_rng);
    std::tie(fc2_weight_, fc2_bias_) = add_linear(params_, head + "fc2.", d, kNumGrades, init_rng);
}

template <typename Real>
Tensor<Real> ClassifierModel<Real>::encode(const PatchSequence& sequence) const {
    if (sequence.frames() == 0) {
        throw std::invalid_argument("classifier: empty context");
    }
    const std::size_t rows = sequence.frames() * config_.geometry.tokens_per_frame();
    if (sequence.patches.size() != rows * config_.geometry.patch_dim()) {
        throw ShapeError("classifier: sequence holds " + std::to_string(sequence.patches.size()) +
                         " patch values for " + std::to_string(sequence.frames()) + " frames");
    }
    const auto* temporal = config_.temporal == TemporalVariant::time_aware ? &temporal_ : nullptr;
    auto tokens = embed_sequence(embed_, sequence.patches, sequence.times, config_.temporal, temporal);
    return encoder_.forward(tokens);
}

template <typename Real>
Tensor<Real> ClassifierModel<Real>::logits(const PatchSequence& sequence) const {
    const std::size_t d = config_.encoder.d_model;
    auto pooled = reshape(mean_axis(encode(sequence), 0), {1, d});
    auto hidden = gelu(linear(pooled, fc1_weight_, fc1_bias_));
    return linear(hidden, fc2_weight_, fc2_bias_);
}

template <typename Real>
void load_pretrained(ClassifierModel<Real>& model, const Checkpoint& checkpoint, const InitPolicy& policy) {
    std::vector<std::string> prefixes;
    if (policy.use_embedding_layer) {
        // Embedding weights only make sense with the inputs they were trained on.
        if (auto it = checkpoint.metadata.find("input_norm"); it != checkpoint.metadata.end()) {
            if (parse_pixel_norm(it->second) != model.config().input_norm) {
                throw std::invalid_argument("load_pretrained: checkpoint input normalization " + it->second +
                                            " differs from the classifier's " +
                                            format_pixel_norm(model.config().input_norm));
            }
        }
        prefixes.emplace_back(kPatchEmbedPrefix);
    }
    if (policy.use_temporal_embedding) {
        prefixes.emplace_back(kTemporalEmbedPrefix);
    }
    if (policy.use_encoder_weights) {
        prefixes.emplace_back(kEncoderPrefix);
    }
    for (const auto& prefix : prefixes) {
        const bool model_has = model.parameters().scalar_count(prefix) > 0;
        if (!model_has) {
            continue;  // e.g. the temporal group of a non-learnable variant
        }
        if (!checkpoint.has_prefix(prefix)) {
            throw std::invalid_argument("load_pretrained: checkpoint has no '" + prefix + "' parameters");
        }
        load_parameters(model.parameters(), checkpoint, prefix, false);
    }
}

template <typename Real>
std::array<double, kNumGrades> predict_next(const ClassifierModel<Real>& model, const PatchSequence& context) {
    auto probs = softmax(model.logits(context), 1);
    std::array<double, kNumGrades> out{};
    auto p = probs.data();
    for (std::size_t c = 0; c < kNumGrades; ++c) {
        out[c] = static_cast<double>(p[c]);
    }
    return out;
}

template <typename Real>
Tensor<Real> classification_loss(const ClassifierModel<Real>& model, std::span<const FinetuneExample> batch) {
    if (batch.empty()) {
        throw std::invalid_argument("classification_loss: empty batch");
    }
    std::vector<Tensor<Real>> rows;
    std::vector<int> targets;
    rows.reserve(batch.size());
    for (const auto& ex : batch) {
        if (ex.target < 0 || ex.target >= static_cast<int>(kNumGrades)) {
            throw std::invalid_argument("classification_loss: target grade " + std::to_string(ex.target) +
                                        " outside 0..4");
        }
        rows.push_back(model.logits(*ex.context));
        targets.push_back(ex.target);
    }
    return cross_entropy(concat_rows(rows), std::span<const int>(targets));
}

template <typename Real>
double finetune_step(ClassifierModel<Real>& model, std::span<const FinetuneExample> batch, double lr,
                     const AdamWConfig& adamw) {
    auto loss = classification_loss(model, batch);
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) {
        model.parameters().zero_grad();
        throw NumericError("finetune_step: non-finite loss " + std::to_string(value));
    }
    backward(loss);
    adamw_step(model.parameters(), lr, adamw);
    model.parameters().zero_grad();
    return value;
}

#define LMAE_INSTANTIATE_FINETUNE(Real)                                                                           \
    template class ClassifierModel<Real>;                                                                         \
    template void load_pretrained(ClassifierModel<Real>&, const Checkpoint&, const InitPolicy&);                  \
    template std::array<double, kNumGrades> predict_next(const ClassifierModel<Real>&, const PatchSequence&);     \
    template Tensor<Real> classification_loss(const ClassifierModel<Real>&, std::span<const FinetuneExample>);   \
    template double finetune_step(ClassifierModel<Real>&, std::span<const FinetuneExample>, double,               \
                                  const AdamWConfig&);

LMAE_INSTANTIATE_FINETUNE(float)
LMAE_INSTANTIATE_FINETUNE(double)

#undef LMAE_INSTANTIATE_FINETUNE

}  // namespace lmae
