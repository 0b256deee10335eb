#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "lmae/checkpoint.hpp"
#include "lmae/data.hpp"
#include "lmae/eval.hpp"
#include "lmae/finetune.hpp"
#include "lmae/gradcheck.hpp"
#include "lmae/image.hpp"
#include "lmae/lmae.hpp"
#include "lmae/masking.hpp"
#include "lmae/rng.hpp"
#include "lmae/run_config.hpp"
#include "lmae/train.hpp"

namespace lmae {

namespace {

namespace fs = std::filesystem;

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string hex_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

// Keys that fix a model's shape; evaluate takes them from the checkpoint.
constexpr std::string_view kArchitectureKeys[] = {"image_size", "patch_size",      "channels", "d_model",
                                                  "depth",      "heads",           "temporal", "context_frames",
                                                  "normalize_target"};

struct Command {
    CLI::App* app = nullptr;
    std::string config_file;
    std::string preset;
    std::vector<std::pair<std::string, CLI::Option*>> keys;
    std::map<std::string, std::string> values;
};

void register_keys(Command& cmd) {
    cmd.app->add_option("--config", cmd.config_file, "key = value config file");
    cmd.app->add_option("--preset", cmd.preset, "named preset: smoke, overfit, desk, vit-b");
    for (const auto& k : config_schema()) {
        const std::string name(k.name);
        auto* opt = cmd.app->add_option("--" + name, cmd.values[name], std::string(k.help));
        opt->default_str(std::string(k.default_value));
        cmd.keys.emplace_back(name, opt);
    }
}

/// defaults < preset < file < environment (paths) < flags
RunConfig resolve(const Command& cmd) {
    RunConfig c;
    if (!cmd.preset.empty()) {
        c.apply_preset(cmd.preset);
    }
    if (!cmd.config_file.empty()) {
        c.apply_file(cmd.config_file);
    }
    c.apply_environment();
    for (const auto& [name, opt] : cmd.keys) {
        if (opt->count() > 0) {
            c.set(name, cmd.values.at(name));
        }
    }
    return c;
}

void stamp(Checkpoint& ckpt, const RunConfig& c, std::string_view kind) {
    ckpt.metadata["kind"] = std::string(kind);
    ckpt.metadata["config"] = c.dump();
    ckpt.metadata["temporal"] = c.get("temporal");
}

fs::path ensure_out(const RunConfig& c) {
    const auto out = c.get_path("out");
    fs::create_directories(out);
    return out;
}

std::optional<Checkpoint> load_resume(const RunConfig& c, std::string_view kind) {
    if (c.get("resume").empty()) {
        return std::nullopt;
    }
    auto ckpt = Checkpoint::load(c.get_path("resume"));
    const auto it = ckpt.metadata.find("kind");
    if (it == ckpt.metadata.end() || it->second != kind) {
        throw ConfigError("resume: " + c.get("resume") + " is not a '" + std::string(kind) + "' checkpoint");
    }
    return ckpt;
}

template <typename Model>
int train_model(const RunConfig& c, Model& model, std::string_view name, std::ostream& out, std::ostream& err,
                const std::function<FitResult<float>(LossLog&, const TrainState<float>*, const EpochCallback<float>&)>& run,
                const std::function<void(Checkpoint&)>& extra_meta) {
    const auto dir = ensure_out(c);
    const std::string last_kind = std::string(name) + "_train";
    const auto resume_ckpt = load_resume(c, last_kind);
    std::optional<TrainState<float>> resume;
    if (resume_ckpt) {
        load_parameters(model.parameters(), *resume_ckpt, {}, true);
        resume = load_train_state(*resume_ckpt, model.parameters());
        out << "resuming at step " << resume->step << ", epoch " << resume->epoch << '\n';
    }
    LossLog log(dir / (std::string(name) + "_log.jsonl"), resume.has_value());
    const auto last_path = dir / (std::string(name) + "_last.ckpt");
    EpochCallback<float> on_epoch = [&](const TrainState<float>& st) {
        Checkpoint ckpt;
        store_parameters(ckpt, model.parameters(), true);
        store_train_state(ckpt, st, model.parameters());
        stamp(ckpt, c, last_kind);
        extra_meta(ckpt);
        ckpt.save(last_path);
        out << name << " epoch " << st.epoch << " val " << st.val_history.back() << '\n' << std::flush;
    };
    const auto result = run(log, resume ? &*resume : nullptr, on_epoch);

    Checkpoint best;
    store_parameters(best, model.parameters(), false);
    stamp(best, c, name);
    extra_meta(best);
    best.metadata["best_val"] = hex_real(result.state.best_val);
    best.metadata["best_epoch"] = std::to_string(result.state.best_epoch);
    const auto best_path = dir / (std::string(name) + ".ckpt");
    best.save(best_path);
    if (result.aborted) {
        err << name << " aborted: " << result.abort_reason << "; best weights saved to " << best_path.string() << '\n';
        return kExitFailure;
    }
    out << name << " done: best val " << result.state.best_val << " at epoch " << result.state.best_epoch
        << ", steps " << result.state.step << ", checkpoint " << best_path.string() << '\n';
    return kExitOk;
}

int cmd_generate_data(const RunConfig& c, std::ostream& out) {
    const auto gen = c.synthetic();
    const auto records = generate_synthetic(gen);
    const auto manifest = write_dataset(c.get_path("data_dir"), records);
    out << "wrote " << records.size() << " patients to " << manifest.string() << '\n';
    return kExitOk;
}

int cmd_pretrain(const RunConfig& c, std::ostream& out, std::ostream& err) {
    const auto pc = c.pipeline();
    const auto data = load_pipeline_data(pc);
    if (data.pretrain_train.empty()) {
        throw DataError("pretrain: no training sequence has " + std::to_string(pc.context_frames) + " visits");
    }
    const Rng root(pc.seed);
    Rng init = root.substream("init").substream("lmae");
    LMAEModel<float> model(pc.lmae_config(c.temporal(), data.input_norm), init);
    const auto mask = c.mask();
    return train_model(
        c, model, "pretrain", out, err,
        [&](LossLog& log, const TrainState<float>* resume, const EpochCallback<float>& cb) {
            return fit_pretraining(model, data.pretrain_train, data.pretrain_val, mask, pc.pretrain,
                                   root.substream("pretrain"), &log, resume, cb);
        },
        [&](Checkpoint& ckpt) {
            ckpt.metadata["input_norm"] = format_pixel_norm(data.input_norm);
            ckpt.metadata["mask"] = std::string(to_string(mask.strategy));
            ckpt.metadata["mask_parameter"] = c.get("mask_parameter");
        });
}

int cmd_finetune(const RunConfig& c, std::ostream& out, std::ostream& err) {
    const auto pc = c.pipeline();
    const auto data = load_pipeline_data(pc);
    if (data.train.empty()) {
        throw DataError("finetune: no training windows");
    }
    const Rng root(pc.seed);
    Rng init = root.substream("init").substream("classifier");
    ClassifierModel<float> model(ClassifierConfig::from(pc.lmae_config(c.temporal(), data.input_norm)), init);
    const auto policy = c.init_policy();
    if (!c.get("checkpoint").empty() && policy.any() && c.get("resume").empty()) {
        load_pretrained(model, Checkpoint::load(c.get_path("checkpoint")), policy);
    }
    return train_model(
        c, model, "classifier", out, err,
        [&](LossLog& log, const TrainState<float>* resume, const EpochCallback<float>& cb) {
            return fit_classifier(model, data.train, data.val, pc.finetune, root.substream("finetune"), &log, resume,
                                  cb);
        },
        [&](Checkpoint& ckpt) {
            ckpt.metadata["input_norm"] = format_pixel_norm(data.input_norm);
            ckpt.metadata["init_policy"] = policy.label();
            ckpt.metadata["pretrained"] = c.get("checkpoint");
        });
}

int cmd_evaluate(RunConfig c, std::ostream& out) {
    if (c.get("checkpoint").empty()) {
        throw ConfigError("evaluate: --checkpoint is required");
    }
    const auto ckpt = Checkpoint::load(c.get_path("checkpoint"));
    const auto kind = ckpt.metadata.find("kind");
    if (kind == ckpt.metadata.end() || kind->second != "classifier") {
        throw ConfigError("evaluate: " + c.get("checkpoint") + " is not a classifier checkpoint");
    }
    if (const auto stored = ckpt.metadata.find("config"); stored != ckpt.metadata.end()) {
        RunConfig trained;
        trained.apply_text(stored->second, "checkpoint config");
        for (auto key : kArchitectureKeys) {
            c.set(key, trained.get(key));
        }
        c.validate();
    }
    const auto pc = c.pipeline();
    const auto data = load_pipeline_data(pc);
    Rng init = Rng(pc.seed).substream("init").substream("classifier");
    PixelNorm norm;
    if (const auto it = ckpt.metadata.find("input_norm"); it != ckpt.metadata.end()) {
        norm = parse_pixel_norm(it->second);
    }
    ClassifierModel<float> model(ClassifierConfig::from(pc.lmae_config(c.temporal(), norm)), init);
    load_parameters(model.parameters(), ckpt);
    auto report = evaluate(model, data.test);
    nlohmann::json fp = pc.to_json();
    fp["checkpoint_config"] = ckpt.metadata.count("config") ? ckpt.metadata.at("config") : "";
    fp["checkpoint_best_val"] = ckpt.metadata.count("best_val") ? ckpt.metadata.at("best_val") : "";
    report.fingerprint = hex(fnv1a64(fp.dump()));
    auto j = report.to_json();
    j["checkpoint"] = c.get("checkpoint");
    j["temporal"] = c.get("temporal");
    j["seed"] = pc.seed;
    const auto dir = ensure_out(c);
    std::ofstream(dir / "eval_report.jsonl", std::ios::app) << j.dump() << '\n';
    out << j.dump() << '\n';
    return kExitOk;
}

std::vector<int> parse_grades(const std::string& text) {
    std::vector<int> grades;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const int g = std::stoi(item, &used);
            if (used != item.size() || g < 0 || g >= static_cast<int>(kNumGrades)) {
                throw std::invalid_argument(item);
            }
            grades.push_back(g);
        } catch (const std::logic_error&) {
            throw ConfigError("preview_grades: '" + item + "' is not a grade 0-4");
        }
    }
    if (grades.empty()) {
        throw ConfigError("preview_grades: at least one grade required");
    }
    return grades;
}

int cmd_mask_preview(const RunConfig& c, std::ostream& out) {
    const auto geometry = c.pipeline().geometry();
    const std::size_t q = geometry.grid_side();
    const std::size_t cell = geometry.patch_size;
    const auto grades = parse_grades(c.get("preview_grades"));
    const auto draws = c.get_size("preview_draws");
    if (draws == 0) {
        throw ConfigError("preview_draws must be positive");
    }
    const auto mask = c.mask();
    const Rng root = Rng(c.get_u64("seed")).substream("mask").substream("preview");

    std::vector<double> mean(grades.size(), 0.0);
    TokenMask first;
    for (std::size_t d = 0; d < draws; ++d) {
        Rng rng = root.substream("draw", d);
        const auto m = generate_mask(mask, q, grades, rng);
        if (d == 0) {
            first = m;
        }
        for (std::size_t f = 0; f < grades.size(); ++f) {
            mean[f] += static_cast<double>(m.masked_count_in_frame(f));
        }
    }

    const auto dir = ensure_out(c);
    nlohmann::json summary{{"strategy", to_string(mask.strategy)},
                           {"parameter", mask.parameter},
                           {"kernel", to_string(mask.kernel)},
                           {"grid_side", q},
                           {"draws", draws},
                           {"frames", nlohmann::json::array()}};
    out << "frame grade masked(first) mean_masked image\n";
    for (std::size_t f = 0; f < grades.size(); ++f) {
        Image img(q * cell, q * cell, 1);
        for (std::size_t i = 0; i < q; ++i) {
            for (std::size_t j = 0; j < q; ++j) {
                const float v = first.visible(f, i, j) ? 1.0f : 0.0f;
                for (std::size_t y = 0; y < cell; ++y) {
                    for (std::size_t x = 0; x < cell; ++x) {
                        img.at(i * cell + y, j * cell + x) = v;
                    }
                }
            }
        }
        const std::string name = "mask_f" + std::to_string(f) + "_s" + std::to_string(grades[f]) + ".pgm";
        write_pnm(dir / name, img);
        mean[f] /= static_cast<double>(draws);
        summary["frames"].push_back({{"frame", f},
                                     {"grade", grades[f]},
                                     {"image", name},
                                     {"masked_first_draw", first.masked_count_in_frame(f)},
                                     {"mean_masked", mean[f]}});
        out << f << ' ' << grades[f] << ' ' << first.masked_count_in_frame(f) << ' ' << std::fixed
            << std::setprecision(3) << mean[f] << std::defaultfloat << ' ' << name << '\n';
    }
    std::ofstream(dir / "mask_preview.json") << summary.dump(2) << '\n';
    return kExitOk;
}

int cmd_gradcheck(const RunConfig& c, std::ostream& out) {
    const auto results = run_gradcheck_suite(c.get_u64("seed"));
    bool ok = true;
    for (const auto& r : results) {
        ok = ok && r.passed;
        out << std::left << std::setw(22) << r.name << ' ' << std::scientific << std::setprecision(3)
            << r.max_rel_error << std::defaultfloat << ' ' << (r.passed ? "PASS" : "FAIL");
        if (!r.passed) {
            out << " (worst: " << r.worst_input << ')';
        }
        out << '\n';
    }
    out << (ok ? "all gradient checks passed" : "gradient checks FAILED") << '\n';
    return ok ? kExitOk : kExitFailure;
}

int cmd_experiment(const RunConfig& c, std::ostream& out) {
    ExperimentConfig ec;
    ec.pipeline = c.pipeline();
    ec.cells = grid_preset(c.get("grid"));
    ec.seeds = c.grid_seeds();
    ec.workers = std::max<std::size_t>(1, c.get_size("workers"));
    const auto dir = ensure_out(c);
    ec.log_dir = dir / "logs";
    const auto results = run_experiment(ec);
    {
        std::ofstream jsonl(dir / "results.jsonl");
        write_results_jsonl(jsonl, results, ec.pipeline);
    }
    const auto table = render_results_table(results);
    std::ofstream(dir / "results.txt") << table;
    out << table;
    const bool failed = std::any_of(results.begin(), results.end(), [](const auto& r) { return !r.error.empty(); });
    return failed ? kExitFailure : kExitOk;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Longitudinal masked autoencoder: data, pretraining, fine-tuning, evaluation"};
    app.name("lmae");
    app.require_subcommand(1);

    std::map<std::string, Command> commands;
    auto add = [&](CLI::App* parent, const std::string& name, const std::string& help) -> Command& {
        auto& cmd = commands[name];
        cmd.app = parent->add_subcommand(name, help);
        register_keys(cmd);
        return cmd;
    };
    add(&app, "generate-data", "write a synthetic manifest and image directory to data_dir");
    add(&app, "pretrain", "pretrain the masked autoencoder");
    add(&app, "finetune", "fine-tune the severity classifier");
    add(&app, "evaluate", "score a classifier checkpoint on the test windows");
    add(&app, "mask-preview", "write per-frame mask images and mean masked counts");
    add(&app, "gradcheck", "finite-difference gradient self-check");
    add(&app, "experiment", "run an experiment grid");
    auto* config_app = app.add_subcommand("config", "configuration utilities");
    config_app->require_subcommand(1);
    add(config_app, "dump", "print every key with its resolved value");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitInvalid;
    }

    try {
        for (auto& [name, cmd] : commands) {
            if (!cmd.app->parsed()) {
                continue;
            }
            const auto c = resolve(cmd);
            if (name == "dump") {
                out << c.dump();
                return kExitOk;
            }
            c.validate();
            if (name == "generate-data") {
                return cmd_generate_data(c, out);
            }
            if (name == "pretrain") {
                return cmd_pretrain(c, out, err);
            }
            if (name == "finetune") {
                return cmd_finetune(c, out, err);
            }
            if (name == "evaluate") {
                return cmd_evaluate(c, out);
            }
            if (name == "mask-preview") {
                return cmd_mask_preview(c, out);
            }
            if (name == "gradcheck") {
                return cmd_gradcheck(c, out);
            }
            if (name == "experiment") {
                return cmd_experiment(c, out);
            }
        }
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const std::exception& e) {
        err << "failed: " << e.what() << '\n';
        return kExitFailure;
    }
    err << "error: no command\n";
    return kExitInvalid;
}

}  // namespace lmae
