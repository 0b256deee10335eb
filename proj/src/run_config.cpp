#include "lmae/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace lmae {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

const ConfigKey* find_key(std::string_view name) {
    for (const auto& k : config_schema()) {
        if (k.name == name) {
            return &k;
        }
    }
    return nullptr;
}

void check_value(const ConfigKey& key, std::string_view value) {
    auto fail = [&](const char* what) {
        throw ConfigError("config key '" + std::string(key.name) + "': '" + std::string(value) + "' is not " + what);
    };
    switch (key.type) {
        case KeyType::integer: {
            std::int64_t v = 0;
            auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
            if (ec != std::errc{} || p != value.data() + value.size()) {
                fail("an integer");
            }
            break;
        }
        case KeyType::real: {
            const std::string s(value);
            char* end = nullptr;
            std::strtod(s.c_str(), &end);
            if (s.empty() || end != s.c_str() + s.size()) {
                fail("a number");
            }
            break;
        }
        case KeyType::boolean:
            if (value != "true" && value != "false") {
                fail("true or false");
            }
            break;
        case KeyType::text:
        case KeyType::path:
            break;
    }
}

struct Preset {
    std::string_view name;
    std::vector<std::pair<std::string_view, std::string_view>> values;
};

const std::vector<Preset>& presets() {
    static const std::vector<Preset> table{
        {"smoke",
         {{"n_patients", "12"},
          {"image_size", "16"},
          {"patch_size", "8"},
          {"d_model", "16"},
          {"depth", "2"},
          {"heads", "2"},
          {"pretrain_epochs", "12"},
          {"finetune_epochs", "4"},
          {"grid", "trend"},
          {"grid_seeds", "0"}}},
        {"overfit",
         {{"n_patients", "4"},
          {"min_visits", "3"},
          {"max_visits", "3"},
          {"split_train", "1"},
          {"split_val", "0"},
          {"split_test", "0"},
          {"image_size", "16"},
          {"patch_size", "4"},
          {"d_model", "32"},
          {"depth", "2"},
          {"heads", "4"},
          {"mask_strategy", "random"},
          {"mask_parameter", "0.5"},
          {"pretrain_batch_size", "4"},
          {"pretrain_epochs", "2000"},
          {"pretrain_lr", "0.01"},
          {"pretrain_schedule", "onecycle"},
          {"pretrain_weight_decay", "0"}}},
        {"desk",
         {{"n_patients", "200"},
          {"image_size", "32"},
          {"patch_size", "8"},
          {"d_model", "64"},
          {"depth", "4"},
          {"heads", "4"},
          {"context_frames", "3"},
          {"grid", "trend"},
          {"grid_seeds", "0,1,2"}}},
        {"vit-b",
         {{"image_size", "224"},
          {"patch_size", "16"},
          {"channels", "3"},
          {"d_model", "768"},
          {"depth", "12"},
          {"heads", "12"},
          {"pretrain_epochs", "400"},
          {"finetune_epochs", "200"}}},
    };
    return table;
}

}  // namespace

const std::vector<ConfigKey>& config_schema() {
    static const std::vector<ConfigKey> schema{
        {"seed", KeyType::integer, "0", "root seed; all randomness derives from it"},
        {"out", KeyType::path, "runs", "output directory"},
        {"data_dir", KeyType::path, "data", "generate-data output directory"},
        {"manifest", KeyType::path, "", "JSONL manifest of real data; empty = synthetic data from seed"},
        {"checkpoint", KeyType::path, "", "input checkpoint (finetune: pretrained; evaluate: classifier)"},
        {"resume", KeyType::path, "", "resumable checkpoint to continue training from"},
        {"n_patients", KeyType::integer, "200", "synthetic patients"},
        {"image_size", KeyType::integer, "32", "square frame side H = W"},
        {"patch_size", KeyType::integer, "8", "patch side P"},
        {"channels", KeyType::integer, "1", "image channels C"},
        {"min_visits", KeyType::integer, "4", "synthetic visits per patient, lower bound"},
        {"max_visits", KeyType::integer, "8", "synthetic visits per patient, upper bound"},
        {"gap_min", KeyType::real, "0.5", "shortest inter-visit gap (years)"},
        {"gap_max", KeyType::real, "2.5", "longest inter-visit gap (years)"},
        {"hazard_min", KeyType::real, "0.05", "slowest progression hazard (grades per year)"},
        {"hazard_max", KeyType::real, "1", "fastest progression hazard (grades per year)"},
        {"noise_sd", KeyType::real, "0.02", "additive pixel noise"},
        {"context_frames", KeyType::integer, "3", "visits per input sequence T"},
        {"horizon_years", KeyType::real, "3", "max gap from last context visit to the target visit"},
        {"split_train", KeyType::real, "0.6", "patient fraction for training"},
        {"split_val", KeyType::real, "0.2", "patient fraction for validation"},
        {"split_test", KeyType::real, "0.2", "patient fraction for testing"},
        {"d_model", KeyType::integer, "64", "encoder width D (decoder uses D/2)"},
        {"depth", KeyType::integer, "4", "encoder depth L (decoder uses L/2)"},
        {"heads", KeyType::integer, "4", "attention heads"},
        {"normalize_target", KeyType::boolean, "false", "reconstruct per-patch standardized pixels"},
        {"temporal", KeyType::text, "time_aware", "temporal code: empty, base, time_aware"},
        {"mask_strategy", KeyType::text, "prog_aware", "random, visit, prog_aware, prog_aware_random"},
        {"mask_parameter", KeyType::real, "0.75", "masking ratio (random) or kernel intensity r (prog_aware*)"},
        {"kernel", KeyType::text, "isotropic", "progression-aware kernel: isotropic or as_printed"},
        {"pretrain_epochs", KeyType::integer, "30", "pretraining epochs"},
        {"pretrain_batch_size", KeyType::integer, "8", "pretraining batch size"},
        {"pretrain_grad_accumulation", KeyType::integer, "1", "pretraining micro-batches per step"},
        {"pretrain_lr", KeyType::real, "0.005", "pretraining peak learning rate"},
        {"pretrain_weight_decay", KeyType::real, "1e-05", "pretraining AdamW weight decay"},
        {"pretrain_schedule", KeyType::text, "onecycle", "constant or onecycle"},
        {"pretrain_pct_start", KeyType::real, "0.3", "one-cycle warm-up fraction"},
        {"finetune_epochs", KeyType::integer, "40", "fine-tuning epochs"},
        {"finetune_batch_size", KeyType::integer, "8", "fine-tuning batch size"},
        {"finetune_grad_accumulation", KeyType::integer, "1", "fine-tuning micro-batches per step"},
        {"finetune_lr", KeyType::real, "0.001", "fine-tuning learning rate"},
        {"finetune_weight_decay", KeyType::real, "0.0001", "fine-tuning AdamW weight decay"},
        {"finetune_schedule", KeyType::text, "constant", "constant or onecycle"},
        {"init_embedding", KeyType::boolean, "true", "fine-tune: copy pretrained patch embedding"},
        {"init_temporal", KeyType::boolean, "true", "fine-tune: copy pretrained temporal embedding"},
        {"init_encoder", KeyType::boolean, "true", "fine-tune: copy pretrained encoder"},
        {"grid", KeyType::text, "table2", "experiment grid: table2, table3, table4, full, trend, scratch"},
        {"grid_seeds", KeyType::text, "0", "comma-separated seeds for the experiment grid"},
        {"workers", KeyType::integer, "1", "parallel experiment cells"},
        {"preview_grades", KeyType::text, "0,1,2,3,4", "mask-preview: severity grade per frame"},
        {"preview_draws", KeyType::integer, "100", "mask-preview: Monte-Carlo draws for mean masked counts"},
    };
    return schema;
}

std::vector<std::string_view> preset_names() {
    std::vector<std::string_view> names;
    for (const auto& p : presets()) {
        names.push_back(p.name);
    }
    return names;
}

RunConfig::RunConfig() {
    for (const auto& k : config_schema()) {
        values_.emplace(std::string(k.name), std::string(k.default_value));
    }
}

void RunConfig::set(std::string_view key, std::string_view value) {
    const auto* k = find_key(key);
    if (k == nullptr) {
        throw ConfigError("unknown config key '" + std::string(key) + "'");
    }
    value = trim(value);
    check_value(*k, value);
    values_.find(key)->second = std::string(value);
}

const std::string& RunConfig::get(std::string_view key) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
        throw ConfigError("unknown config key '" + std::string(key) + "'");
    }
    return it->second;
}

std::int64_t RunConfig::get_int(std::string_view key) const {
    return std::stoll(get(key));
}

std::size_t RunConfig::get_size(std::string_view key) const {
    const auto v = get_int(key);
    if (v < 0) {
        throw ConfigError("config key '" + std::string(key) + "' must be nonnegative");
    }
    return static_cast<std::size_t>(v);
}

std::uint64_t RunConfig::get_u64(std::string_view key) const {
    return static_cast<std::uint64_t>(get_size(key));
}

double RunConfig::get_real(std::string_view key) const {
    return std::strtod(get(key).c_str(), nullptr);
}

bool RunConfig::get_bool(std::string_view key) const {
    return get(key) == "true";
}

std::filesystem::path RunConfig::get_path(std::string_view key) const {
    return get(key);
}

void RunConfig::apply_preset(std::string_view name) {
    for (const auto& p : presets()) {
        if (p.name == name) {
            for (const auto& [k, v] : p.values) {
                set(k, v);
            }
            return;
        }
    }
    throw ConfigError("unknown preset '" + std::string(name) + "' (expected smoke, overfit, desk or vit-b)");
}

void RunConfig::apply_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config file " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    apply_text(ss.str(), path.string());
}

void RunConfig::apply_text(std::string_view text, std::string_view origin) {
    std::istringstream in{std::string(text)};
    std::string raw;
    std::size_t line_no = 0;
    std::map<std::string, std::size_t> seen;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line = raw;
        if (auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        const std::string where = std::string(origin) + ":" + std::to_string(line_no) + ": ";
        if (eq == std::string_view::npos) {
            throw ConfigError(where + "expected 'key = value'");
        }
        const std::string key(trim(line.substr(0, eq)));
        if (auto [it, inserted] = seen.emplace(key, line_no); !inserted) {
            throw ConfigError(where + "key '" + key + "' already set on line " + std::to_string(it->second));
        }
        try {
            set(key, line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }
}

void RunConfig::apply_environment() {
    const std::pair<const char*, const char*> vars[] = {{"LMAE_OUT", "out"},
                                                        {"LMAE_DATA_DIR", "data_dir"},
                                                        {"LMAE_MANIFEST", "manifest"},
                                                        {"LMAE_CHECKPOINT", "checkpoint"},
                                                        {"LMAE_RESUME", "resume"}};
    for (const auto& [env, key] : vars) {
        if (const char* v = std::getenv(env); v != nullptr) {
            set(key, v);
        }
    }
}

std::string RunConfig::dump() const {
    std::ostringstream os;
    for (const auto& k : config_schema()) {
        os << "# " << k.help << '\n' << k.name << " = " << get(k.name) << '\n';
    }
    return os.str();
}

SyntheticGenConfig RunConfig::synthetic() const {
    SyntheticGenConfig c;
    c.n_patients = get_size("n_patients");
    c.image_size = get_size("image_size");
    c.patch_size = get_size("patch_size");
    c.seed = get_u64("seed");
    c.min_visits = get_size("min_visits");
    c.max_visits = get_size("max_visits");
    c.gap_min = get_real("gap_min");
    c.gap_max = get_real("gap_max");
    c.hazard_min = get_real("hazard_min");
    c.hazard_max = get_real("hazard_max");
    c.noise_sd = get_real("noise_sd");
    return c;
}

PipelineConfig RunConfig::pipeline() const {
    PipelineConfig p;
    p.data = synthetic();
    p.manifest = get_path("manifest");
    p.split = {get_real("split_train"), get_real("split_val"), get_real("split_test")};
    p.context_frames = get_size("context_frames");
    p.horizon_years = get_real("horizon_years");
    p.channels = get_size("channels");
    p.d_model = get_size("d_model");
    p.depth = get_size("depth");
    p.heads = get_size("heads");
    p.normalize_target = get_bool("normalize_target");
    p.kernel = parse_kernel_variant(get("kernel"));
    auto fit = [&](const std::string& prefix, FitConfig f) {
        f.epochs = get_size(prefix + "epochs");
        f.batch_size = get_size(prefix + "batch_size");
        f.grad_accumulation = get_size(prefix + "grad_accumulation");
        f.lr = get_real(prefix + "lr");
        f.adamw.weight_decay = get_real(prefix + "weight_decay");
        f.schedule = parse_schedule(get(prefix + "schedule"));
        return f;
    };
    p.pretrain = fit("pretrain_", PipelineConfig::default_pretrain_fit());
    p.pretrain.onecycle.pct_start = get_real("pretrain_pct_start");
    p.finetune = fit("finetune_", PipelineConfig::default_finetune_fit());
    p.seed = get_u64("seed");
    return p;
}

MaskConfig RunConfig::mask() const {
    MaskConfig m;
    m.strategy = parse_mask_strategy(get("mask_strategy"));
    m.parameter = get_real("mask_parameter");
    m.kernel = parse_kernel_variant(get("kernel"));
    return m;
}

TemporalVariant RunConfig::temporal() const {
    return parse_temporal_variant(get("temporal"));
}

InitPolicy RunConfig::init_policy() const {
    return {get_bool("init_embedding"), get_bool("init_temporal"), get_bool("init_encoder")};
}

std::vector<std::uint64_t> RunConfig::grid_seeds() const {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(get("grid_seeds"));
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto t = trim(item);
        std::uint64_t v = 0;
        auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
        if (t.empty() || ec != std::errc{} || p != t.data() + t.size()) {
            throw ConfigError("grid_seeds: '" + std::string(t) + "' is not a seed");
        }
        seeds.push_back(v);
    }
    if (seeds.empty()) {
        throw ConfigError("grid_seeds: at least one seed required");
    }
    return seeds;
}

void RunConfig::validate() const {
    auto wrap = [](auto&& fn) {
        try {
            fn();
        } catch (const ConfigError&) {
            throw;
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    };
    wrap([&] {
        const auto p = pipeline();
        p.geometry().validate();
        if (p.manifest.empty()) {
            p.data.validate();
        }
        p.pretrain.validate();
        p.finetune.validate();
        (void)p.lmae_config(temporal());
        p.lmae_config(temporal()).validate();
        mask().validate();
        (void)grid_preset(get("grid"));
        (void)grid_seeds();
        const double total = p.split.train + p.split.val + p.split.test;
        if (std::abs(total - 1.0) > 1e-9) {
            throw ConfigError("split fractions must sum to 1");
        }
        if (p.manifest.empty() && p.channels != 1) {
            throw ConfigError("synthetic data is single-channel; set channels = 1 or give a manifest");
        }
        if (p.context_frames == 0) {
            throw ConfigError("context_frames must be positive");
        }
    });
}

}  // namespace lmae
