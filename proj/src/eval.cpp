#include "lmae/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "lmae/rng.hpp"

namespace lmae {

namespace {

constexpr std::size_t kPairCountingLimit = 10000;

std::optional<double> auc_pairs(std::span<const double> scores, std::span<const int> labels) {
    // Counts in half-units so ties stay integral.
    std::uint64_t half_wins = 0;
    std::uint64_t pos = 0;
    std::uint64_t neg = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] == 1) {
            ++pos;
        } else {
            ++neg;
        }
    }
    if (pos == 0 || neg == 0) {
        return std::nullopt;
    }
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) {
            continue;
        }
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] == 1) {
                continue;
            }
            if (scores[i] > scores[j]) {
                half_wins += 2;
            } else if (scores[i] == scores[j]) {
                half_wins += 1;
            }
        }
    }
    return static_cast<double>(half_wins) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

std::optional<double> auc_ranks(std::span<const double> scores, std::span<const int> labels) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Twice the rank sum of positives, with tied groups sharing their mean rank.
    std::uint64_t twice_rank_sum = 0;
    std::uint64_t pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) {
            ++j;
        }
        const std::uint64_t twice_mean_rank = (i + 1) + j;  // ranks i+1 .. j
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) {
                twice_rank_sum += twice_mean_rank;
                ++pos;
            }
        }
        i = j;
    }
    const std::uint64_t neg = n - pos;
    if (pos == 0 || neg == 0) {
        return std::nullopt;
    }
    const double twice_u = static_cast<double>(twice_rank_sum) - static_cast<double>(pos * (pos + 1));
    return twice_u / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string format_param(const std::optional<MaskConfig>& mask) {
    if (!mask || mask->strategy == MaskStrategy::visit) {
        return "-";
    }
    std::ostringstream os;
    os << (mask->strategy == MaskStrategy::random ? "r_mask=" : "r=") << mask->parameter;
    return os.str();
}

std::string format_auc(const std::optional<double>& v) {
    if (!v) {
        return "undef";
    }
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << *v;
    return os.str();
}

nlohmann::json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

std::optional<double> auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) {
        throw std::invalid_argument("auc: " + std::to_string(scores.size()) + " scores vs " +
                                    std::to_string(labels.size()) + " labels");
    }
    for (int l : labels) {
        if (l != 0 && l != 1) {
            throw std::invalid_argument("auc: labels must be 0 or 1");
        }
    }
    for (double s : scores) {
        if (std::isnan(s)) {
            throw std::invalid_argument("auc: NaN score");
        }
    }
    return scores.size() <= kPairCountingLimit ? auc_pairs(scores, labels) : auc_ranks(scores, labels);
}

double threshold_score(std::span<const double> probs, int threshold) {
    if (probs.size() != kNumGrades) {
        throw std::invalid_argument("threshold_score: expected 5 probabilities");
    }
    if (threshold < 0 || threshold >= static_cast<int>(kNumGrades)) {
        throw std::invalid_argument("threshold_score: threshold outside 0..4");
    }
    double s = 0.0;
    for (auto c = static_cast<std::size_t>(threshold); c < kNumGrades; ++c) {
        s += probs[c];
    }
    return s;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json j;
    for (std::size_t t = 0; t < kThresholdTasks.size(); ++t) {
        const std::string name = kThresholdTasks[t].name;
        j["auc_" + name] = optional_json(tasks[t].auc);
        j["positives_" + name] = tasks[t].positives;
        j["negatives_" + name] = tasks[t].negatives;
    }
    j["samples"] = samples;
    j["unit"] = unit;
    j["fingerprint"] = fingerprint;
    return j;
}

EvalReport evaluate_predictions(const std::vector<std::array<double, kNumGrades>>& probs,
                                std::span<const int> targets) {
    if (probs.size() != targets.size()) {
        throw std::invalid_argument("evaluate_predictions: prediction and target counts differ");
    }
    EvalReport report;
    report.samples = probs.size();
    for (std::size_t t = 0; t < kThresholdTasks.size(); ++t) {
        const int g = kThresholdTasks[t].threshold;
        std::vector<double> scores;
        std::vector<int> labels;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            scores.push_back(threshold_score(probs[i], g));
            labels.push_back(targets[i] >= g ? 1 : 0);
        }
        auto& m = report.tasks[t];
        m.positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
        m.negatives = labels.size() - m.positives;
        m.auc = auc(scores, labels);
    }
    return report;
}

template <typename Real>
EvalReport evaluate(const ClassifierModel<Real>& model, const std::vector<LabeledSequence>& data) {
    std::vector<std::array<double, kNumGrades>> probs;
    std::vector<int> targets;
    probs.reserve(data.size());
    for (const auto& d : data) {
        probs.push_back(predict_next(model, d.context));
        targets.push_back(d.target);
    }
    return evaluate_predictions(probs, targets);
}

template EvalReport evaluate(const ClassifierModel<float>&, const std::vector<LabeledSequence>&);
template EvalReport evaluate(const ClassifierModel<double>&, const std::vector<LabeledSequence>&);

FitConfig PipelineConfig::default_pretrain_fit() {
    FitConfig f;
    f.epochs = 10;
    f.batch_size = 8;
    f.lr = kPretrainLearningRate;
    f.schedule = Schedule::onecycle;
    f.adamw.weight_decay = kPretrainWeightDecay;
    return f;
}

FitConfig PipelineConfig::default_finetune_fit() {
    FitConfig f;
    f.epochs = 10;
    f.batch_size = 8;
    f.lr = kFinetuneLearningRate;
    f.schedule = Schedule::constant;
    f.adamw.weight_decay = kFinetuneWeightDecay;
    return f;
}

PatchGeometry PipelineConfig::geometry() const {
    return {data.image_size, data.patch_size, channels};
}

LMAEConfig PipelineConfig::lmae_config(TemporalVariant temporal, PixelNorm input_norm) const {
    auto c = LMAEConfig::standard(geometry(), context_frames, d_model, depth, heads, temporal);
    c.input_norm = input_norm;
    c.normalize_target = normalize_target;
    return c;
}

nlohmann::json PipelineConfig::to_json() const {
    auto fit_json = [](const FitConfig& f) {
        return nlohmann::json{{"epochs", f.epochs},
                              {"batch_size", f.batch_size},
                              {"grad_accumulation", f.grad_accumulation},
                              {"lr", f.lr},
                              {"schedule", to_string(f.schedule)},
                              {"weight_decay", f.adamw.weight_decay}};
    };
    return {{"n_patients", data.n_patients},
            {"image_size", data.image_size},
            {"patch_size", data.patch_size},
            {"channels", channels},
            {"manifest", manifest.string()},
            {"context_frames", context_frames},
            {"horizon_years", horizon_years},
            {"d_model", d_model},
            {"depth", depth},
            {"heads", heads},
            {"normalize_target", normalize_target},
            {"kernel", to_string(kernel)},
            {"pretrain", fit_json(pretrain)},
            {"finetune", fit_json(finetune)}};
}

std::vector<PatchSequence> contiguous_runs(const std::vector<SequenceRecord>& records, std::size_t length,
                                           const PatchGeometry& geometry) {
    std::vector<PatchSequence> out;
    for (const auto& r : records) {
        for (std::size_t start = 0; start + length <= r.visits.size(); ++start) {
            std::vector<VisitRecord> run(r.visits.begin() + static_cast<std::ptrdiff_t>(start),
                                         r.visits.begin() + static_cast<std::ptrdiff_t>(start + length));
            out.push_back(to_patch_sequence(run, geometry));
        }
    }
    return out;
}

PixelNorm pixel_statistics(const std::vector<SequenceRecord>& records) {
    double sum = 0.0;
    double sq = 0.0;
    std::size_t n = 0;
    for (const auto& r : records) {
        for (const auto& v : r.visits) {
            for (float x : v.image.pixels) {
                sum += x;
                sq += static_cast<double>(x) * x;
            }
            n += v.image.pixels.size();
        }
    }
    if (n == 0) {
        return {};
    }
    const double mean = sum / static_cast<double>(n);
    const double var = sq / static_cast<double>(n) - mean * mean;
    return var > 1e-12 ? PixelNorm{mean, std::sqrt(var)} : PixelNorm{mean, 1.0};
}

PreparedData prepare_data(const std::vector<SequenceRecord>& records, const PipelineConfig& config) {
    PreparedData d;
    d.geometry = config.geometry();
    d.geometry.validate();
    const auto split = split_patients(records, config.split, config.seed);
    auto labeled = [&](const std::vector<SequenceRecord>& part) {
        std::vector<LabeledSequence> out;
        for (const auto& w : build_windows(part, config.context_frames, config.horizon_years)) {
            out.push_back({to_patch_sequence(w.context, d.geometry), w.target});
        }
        return out;
    };
    d.train = labeled(split.train);
    d.val = labeled(split.val);
    d.test = labeled(split.test);
    d.input_norm = pixel_statistics(split.train);
    d.pretrain_train = contiguous_runs(split.train, config.context_frames, d.geometry);
    d.pretrain_val = contiguous_runs(split.val, config.context_frames, d.geometry);
    return d;
}

PreparedData load_pipeline_data(const PipelineConfig& config) {
    if (!config.manifest.empty()) {
        return prepare_data(load_manifest(config.manifest), config);
    }
    auto gen = config.data;
    gen.seed = config.seed;
    return prepare_data(generate_synthetic(gen), config);
}

std::string GridCell::strategy_label() const {
    if (!mask) {
        return "none";
    }
    return std::string(to_string(mask->strategy));
}

std::string GridCell::id() const {
    std::ostringstream os;
    os << strategy_label();
    if (mask && mask->strategy != MaskStrategy::visit) {
        os << '-' << mask->parameter;
    }
    os << '_' << to_string(temporal) << '_' << policy.label();
    return os.str();
}

std::vector<GridCell> grid_preset(std::string_view name) {
    const std::array<TemporalVariant, 3> temporals{TemporalVariant::empty, TemporalVariant::base,
                                                    TemporalVariant::time_aware};
    const std::array<double, 3> params{0.25, 0.5, 0.75};
    std::vector<GridCell> cells;
    const InitPolicy all_true{};
    if (name == "table2") {
        for (auto t : temporals) {
            for (auto s : {MaskStrategy::random, MaskStrategy::prog_aware}) {
                for (double p : params) {
                    cells.push_back({MaskConfig{s, p, KernelVariant::isotropic}, t, all_true});
                }
            }
        }
    } else if (name == "table3") {
        for (const auto& policy : InitPolicy::all()) {
            cells.push_back(
                {MaskConfig{MaskStrategy::prog_aware, 0.75, KernelVariant::isotropic}, TemporalVariant::time_aware,
                 policy});
        }
    } else if (name == "table4") {
        for (auto s : {MaskStrategy::random, MaskStrategy::visit, MaskStrategy::prog_aware_random,
                       MaskStrategy::prog_aware}) {
            cells.push_back({MaskConfig{s, 0.75, KernelVariant::isotropic}, TemporalVariant::time_aware, all_true});
        }
    } else if (name == "full") {
        for (auto t : temporals) {
            for (double p : params) {
                cells.push_back({MaskConfig{MaskStrategy::random, p, KernelVariant::isotropic}, t, all_true});
            }
            cells.push_back({MaskConfig{MaskStrategy::visit, 0.75, KernelVariant::isotropic}, t, all_true});
            for (double p : params) {
                cells.push_back({MaskConfig{MaskStrategy::prog_aware, p, KernelVariant::isotropic}, t, all_true});
            }
            cells.push_back(
                {MaskConfig{MaskStrategy::prog_aware_random, 0.75, KernelVariant::isotropic}, t, all_true});
        }
    } else if (name == "trend") {
        for (auto t : temporals) {
            cells.push_back({MaskConfig{MaskStrategy::prog_aware, 0.75, KernelVariant::isotropic}, t, all_true});
        }
    } else if (name == "scratch") {
        for (auto t : temporals) {
            cells.push_back({std::nullopt, t, InitPolicy{false, false, false}});
        }
    } else {
        throw std::invalid_argument("unknown grid preset '" + std::string(name) +
                                    "' (expected table2, table3, table4, full, trend or scratch)");
    }
    return cells;
}

nlohmann::json CellResult::to_json(const PipelineConfig& config) const {
    nlohmann::json j = config.to_json();
    j["seed"] = seed;
    j["cell"] = cell.id();
    j["strategy"] = cell.strategy_label();
    j["mask_parameter"] = cell.mask && cell.mask->strategy != MaskStrategy::visit
                              ? nlohmann::json(cell.mask->parameter)
                              : nlohmann::json(nullptr);
    j["temporal"] = to_string(cell.temporal);
    j["use_embedding_layer"] = cell.policy.use_embedding_layer;
    j["use_temporal_embedding"] = cell.policy.use_temporal_embedding;
    j["use_encoder_weights"] = cell.policy.use_encoder_weights;
    j["pretrain_best_val"] = optional_json(pretrain_best_val);
    j["finetune_best_val"] = finetune_best_val;
    if (report) {
        j["report"] = report->to_json();
        for (std::size_t t = 0; t < kThresholdTasks.size(); ++t) {
            j[std::string("auc_") + kThresholdTasks[t].name] = optional_json(report->tasks[t].auc);
        }
    }
    j["error"] = error.empty() ? nlohmann::json(nullptr) : nlohmann::json(error);
    return j;
}

Checkpoint run_pretraining(const PipelineConfig& config, const PreparedData& data, const MaskConfig& mask,
                           TemporalVariant temporal, LossLog* log) {
    const Rng root(config.seed);
    Rng init = root.substream("init").substream("lmae");
    LMAEModel<float> model(config.lmae_config(temporal, data.input_norm), init);
    auto m = mask;
    m.kernel = config.kernel;
    const auto result =
        fit_pretraining(model, data.pretrain_train, data.pretrain_val, m, config.pretrain, root.substream("pretrain"), log);
    if (result.aborted) {
        throw NumericError("pretraining aborted: " + result.abort_reason);
    }
    Checkpoint ckpt;
    store_parameters(ckpt, model.parameters(), false);
    ckpt.metadata["kind"] = "lmae";
    ckpt.metadata["input_norm"] = format_pixel_norm(data.input_norm);
    ckpt.metadata["mask"] = std::string(to_string(m.strategy));
    ckpt.metadata["mask_parameter"] = std::to_string(m.parameter);
    ckpt.metadata["temporal"] = std::string(to_string(temporal));
    ckpt.metadata["best_val"] = std::to_string(result.state.best_val);
    return ckpt;
}

CellResult run_cell(const PipelineConfig& config, const PreparedData& data, const GridCell& cell,
                    const Checkpoint* pretrained, LossLog* log) {
    CellResult out;
    out.cell = cell;
    out.seed = config.seed;
    const Rng root(config.seed);
    Rng init = root.substream("init").substream("classifier");
    ClassifierModel<float> model(ClassifierConfig::from(config.lmae_config(cell.temporal, data.input_norm)), init);
    if (pretrained != nullptr && cell.policy.any()) {
        load_pretrained(model, *pretrained, cell.policy);
    }
    const auto result = fit_classifier(model, data.train, data.val, config.finetune, root.substream("finetune"), log);
    if (result.aborted) {
        throw NumericError("fine-tuning aborted: " + result.abort_reason);
    }
    out.finetune_best_val = result.state.best_val;
    out.report = evaluate(model, data.test);
    nlohmann::json fp = config.to_json();
    fp["seed"] = config.seed;
    fp["cell"] = cell.id();
    out.report->fingerprint = hex64(fnv1a64(fp.dump()));
    return out;
}

std::vector<CellResult> run_experiment(const ExperimentConfig& config) {
    struct DataSlot {
        std::once_flag once;
        std::shared_ptr<const PreparedData> data;
        std::exception_ptr error;
    };
    struct PretrainSlot {
        std::once_flag once;
        std::shared_ptr<const Checkpoint> ckpt;
        std::optional<double> best_val;
        std::exception_ptr error;
    };
    std::mutex mu;
    std::map<std::uint64_t, std::unique_ptr<DataSlot>> data_slots;
    std::map<std::string, std::unique_ptr<PretrainSlot>> pretrain_slots;
    for (auto seed : config.seeds) {
        data_slots.emplace(seed, std::make_unique<DataSlot>());
    }

    struct Job {
        std::uint64_t seed;
        GridCell cell;
    };
    std::vector<Job> jobs;
    for (auto seed : config.seeds) {
        for (const auto& cell : config.cells) {
            jobs.push_back({seed, cell});
        }
    }
    std::vector<CellResult> results(jobs.size());

    auto log_for = [&](std::uint64_t seed, const std::string& name) -> std::unique_ptr<LossLog> {
        if (config.log_dir.empty()) {
            return nullptr;
        }
        return std::make_unique<LossLog>(config.log_dir / ("seed" + std::to_string(seed)) / (name + ".jsonl"));
    };

    auto run_job = [&](std::size_t index) {
        const auto& job = jobs[index];
        auto& res = results[index];
        res.cell = job.cell;
        res.seed = job.seed;
        PipelineConfig pc = config.pipeline;
        pc.seed = job.seed;
        try {
            auto& ds = *data_slots.at(job.seed);
            std::call_once(ds.once, [&] {
                try {
                    ds.data = std::make_shared<const PreparedData>(load_pipeline_data(pc));
                } catch (...) {
                    ds.error = std::current_exception();
                }
            });
            if (ds.error) {
                std::rethrow_exception(ds.error);
            }
            std::shared_ptr<const Checkpoint> ckpt;
            std::optional<double> pre_val;
            if (job.cell.mask && job.cell.policy.any()) {
                GridCell key_cell = job.cell;
                key_cell.policy = {};
                const std::string key = std::to_string(job.seed) + "/" + key_cell.id();
                PretrainSlot* slot = nullptr;
                {
                    std::lock_guard lock(mu);
                    auto& p = pretrain_slots[key];
                    if (!p) {
                        p = std::make_unique<PretrainSlot>();
                    }
                    slot = p.get();
                }
                std::call_once(slot->once, [&] {
                    try {
                        auto log = log_for(job.seed, key_cell.id() + "_pretrain");
                        auto c = run_pretraining(pc, *ds.data, *job.cell.mask, job.cell.temporal, log.get());
                        slot->best_val = std::stod(c.metadata.at("best_val"));
                        slot->ckpt = std::make_shared<const Checkpoint>(std::move(c));
                    } catch (...) {
                        slot->error = std::current_exception();
                    }
                });
                if (slot->error) {
                    std::rethrow_exception(slot->error);
                }
                ckpt = slot->ckpt;
                pre_val = slot->best_val;
            }
            auto log = log_for(job.seed, job.cell.id() + "_finetune");
            res = run_cell(pc, *ds.data, job.cell, ckpt.get(), log.get());
            res.pretrain_best_val = pre_val;
        } catch (const std::exception& e) {
            res.report.reset();
            res.error = e.what();
        }
    };

    const std::size_t workers = std::max<std::size_t>(1, std::min(config.workers, jobs.size()));
    if (workers == 1) {
        for (std::size_t i = 0; i < jobs.size(); ++i) {
            run_job(i);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < jobs.size(); i = next++) {
                    run_job(i);
                }
            });
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    return results;
}

void write_results_jsonl(std::ostream& os, const std::vector<CellResult>& results, const PipelineConfig& config) {
    for (const auto& r : results) {
        os << r.to_json(config).dump() << '\n';
    }
}

std::string render_results_table(const std::vector<CellResult>& results) {
    std::ostringstream os;
    auto row = [&](const std::string& a, const std::string& b, const std::string& c, const std::string& d,
                   const std::string& e, const std::string& f, const std::string& g, const std::string& h) {
        os << std::left << std::setw(18) << a << std::setw(10) << b << std::setw(11) << c << std::setw(6) << d
           << std::setw(8) << e << std::setw(10) << f << std::setw(11) << g << h << '\n';
    };
    row("Masking", "Param", "Temporal", "Init", "Seed", "Mild+", "Moderate+", "Severe+");
    os << std::string(82, '-') << '\n';
    for (const auto& r : results) {
        std::array<std::string, 3> aucs{"fail", "fail", "fail"};
        if (r.report) {
            for (std::size_t t = 0; t < 3; ++t) {
                aucs[t] = format_auc(r.report->tasks[t].auc);
            }
        }
        row(r.cell.strategy_label(), format_param(r.cell.mask), std::string(to_string(r.cell.temporal)),
            r.cell.policy.label(), std::to_string(r.seed), aucs[0], aucs[1], aucs[2]);
        if (!r.error.empty()) {
            os << "  error: " << r.error << '\n';
        }
    }

    // Mean over seeds per cell, in first-appearance order.
    std::vector<std::string> order;
    std::map<std::string, std::pair<const CellResult*, std::vector<const CellResult*>>> groups;
    for (const auto& r : results) {
        auto& g = groups[r.cell.id()];
        if (g.second.empty()) {
            order.push_back(r.cell.id());
            g.first = &r;
        }
        g.second.push_back(&r);
    }
    if (order.size() == results.size()) {
        return os.str();
    }
    os << '\n' << "Mean over seeds" << '\n';
    row("Masking", "Param", "Temporal", "Init", "Runs", "Mild+", "Moderate+", "Severe+");
    os << std::string(82, '-') << '\n';
    for (const auto& id : order) {
        const auto& [first, members] = groups[id];
        std::array<std::string, 3> aucs;
        for (std::size_t t = 0; t < 3; ++t) {
            double sum = 0.0;
            std::size_t n = 0;
            for (const auto* m : members) {
                if (m->report && m->report->tasks[t].auc) {
                    sum += *m->report->tasks[t].auc;
                    ++n;
                }
            }
            aucs[t] = n == 0 ? "undef" : format_auc(sum / static_cast<double>(n));
        }
        row(first->cell.strategy_label(), format_param(first->cell.mask), std::string(to_string(first->cell.temporal)),
            first->cell.policy.label(), std::to_string(members.size()), aucs[0], aucs[1], aucs[2]);
    }
    return os.str();
}

}  // namespace lmae
