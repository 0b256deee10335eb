#pragma once

// Flat `key = value` run configuration. Every key has an explicit default;
// unknown keys are rejected. Layering, lowest first: defaults, preset,
// config file, LMAE_* path variables, command-line flags.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lmae/eval.hpp"

namespace lmae {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class KeyType { integer, real, boolean, text, path };

struct ConfigKey {
    std::string_view name;
    KeyType type;
    std::string_view default_value;
    std::string_view help;
};

/// The documented schema, in dump order.
const std::vector<ConfigKey>& config_schema();

class RunConfig {
public:
    RunConfig();

    void set(std::string_view key, std::string_view value);
    [[nodiscard]] const std::string& get(std::string_view key) const;

    [[nodiscard]] std::int64_t get_int(std::string_view key) const;
    [[nodiscard]] std::size_t get_size(std::string_view key) const;
    [[nodiscard]] std::uint64_t get_u64(std::string_view key) const;
    [[nodiscard]] double get_real(std::string_view key) const;
    [[nodiscard]] bool get_bool(std::string_view key) const;
    [[nodiscard]] std::filesystem::path get_path(std::string_view key) const;

    /// Applies a named preset: smoke, overfit, desk, vit-b.
    void apply_preset(std::string_view name);
    /// Parses `key = value` lines; '#' starts a comment.
    void apply_file(const std::filesystem::path& path);
    void apply_text(std::string_view text, std::string_view origin);
    /// LMAE_OUT, LMAE_DATA_DIR, LMAE_MANIFEST, LMAE_CHECKPOINT, LMAE_RESUME.
    void apply_environment();

    /// Every key with its current value, as a loadable config file.
    [[nodiscard]] std::string dump() const;

    // Typed views.
    [[nodiscard]] SyntheticGenConfig synthetic() const;
    [[nodiscard]] PipelineConfig pipeline() const;
    [[nodiscard]] MaskConfig mask() const;
    [[nodiscard]] TemporalVariant temporal() const;
    [[nodiscard]] InitPolicy init_policy() const;
    [[nodiscard]] std::vector<std::uint64_t> grid_seeds() const;

    /// Cross-key checks (e.g. image size divisible by patch size).
    void validate() const;

private:
    std::map<std::string, std::string, std::less<>> values_;
};

std::vector<std::string_view> preset_names();

}  // namespace lmae
