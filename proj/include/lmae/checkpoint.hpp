#pragma once

// Flat, self-describing checkpoint archive: parameter name -> (precision tag,
// shape, row-major values), plus string metadata. Layout is documented in
// docs/checkpoint_format.md. Values round-trip bit-exactly.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "lmae/parameter.hpp"

namespace lmae {

enum class Precision : std::uint8_t { f32 = 1, f64 = 2 };

std::string_view to_string(Precision p);

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CheckpointEntry {
    Shape shape;
    std::variant<std::vector<float>, std::vector<double>> values;

    [[nodiscard]] Precision precision() const {
        return std::holds_alternative<std::vector<float>>(values) ? Precision::f32 : Precision::f64;
    }
    [[nodiscard]] std::size_t size() const;

    /// Values converted to Real; exact when Real matches the stored precision.
    template <typename Real>
    [[nodiscard]] std::vector<Real> as() const {
        return std::visit([](const auto& v) { return std::vector<Real>(v.begin(), v.end()); }, values);
    }
};

class Checkpoint {
public:
    std::map<std::string, std::string> metadata;

    template <typename Real>
    void put(const std::string& name, const Shape& shape, std::span<const Real> values);

    [[nodiscard]] const CheckpointEntry* find(std::string_view name) const;
    [[nodiscard]] const CheckpointEntry& at(std::string_view name) const;
    [[nodiscard]] bool has_prefix(std::string_view prefix) const;
    [[nodiscard]] const std::map<std::string, CheckpointEntry, std::less<>>& entries() const noexcept {
        return entries_;
    }

    void write(std::ostream& os) const;
    static Checkpoint read(std::istream& is);
    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);

private:
    std::map<std::string, CheckpointEntry, std::less<>> entries_;
};

inline constexpr std::string_view kOptimizerFirstMoment = "optimizer.m/";
inline constexpr std::string_view kOptimizerSecondMoment = "optimizer.v/";
inline constexpr std::string_view kOptimizerStep = "optimizer.step/";

/// Stores every parameter under its own name; optionally the AdamW moments and
/// step counters as well (for exact resumption).
template <typename Real>
void store_parameters(Checkpoint& ckpt, const ParameterSet<Real>& params, bool with_optimizer_state);

/// Copies every parameter whose name starts with `prefix` from the archive.
/// Throws if a selected parameter is missing or has a different shape.
template <typename Real>
void load_parameters(ParameterSet<Real>& params, const Checkpoint& ckpt, std::string_view prefix = {},
                     bool with_optimizer_state = false);

}  // namespace lmae
