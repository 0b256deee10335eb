#include "lmae/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace lmae {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'L', 'M', 'A', 'E', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMaxStringLength = 1u << 20;
constexpr std::uint32_t kMaxRank = 16;

template <typename T>
void put_raw(std::ostream& os, T value) {
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

void put_string(std::ostream& os, std::string_view s) {
    put_raw<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get_raw(std::istream& is, const char* what) {
    T value{};
    if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) {
        throw FormatError(std::string("checkpoint: truncated while reading ") + what);
    }
    return value;
}

std::string get_string(std::istream& is, const char* what) {
    const auto n = get_raw<std::uint32_t>(is, what);
    if (n > kMaxStringLength) {
        throw FormatError(std::string("checkpoint: implausible length for ") + what);
    }
    std::string s(n, '\0');
    if (n > 0 && !is.read(s.data(), n)) {
        throw FormatError(std::string("checkpoint: truncated while reading ") + what);
    }
    return s;
}

template <typename T>
std::vector<T> get_values(std::istream& is, std::size_t n, const std::string& name) {
    std::vector<T> v(n);
    if (n > 0 && !is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)))) {
        throw FormatError("checkpoint: truncated values for '" + name + "'");
    }
    return v;
}

}  // namespace

std::string_view to_string(Precision p) {
    return p == Precision::f32 ? "f32" : "f64";
}

std::size_t CheckpointEntry::size() const {
    return std::visit([](const auto& v) { return v.size(); }, values);
}

template <typename Real>
void Checkpoint::put(const std::string& name, const Shape& shape, std::span<const Real> values) {
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("checkpoint: entry '" + name + "' shape " + shape_to_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
    }
    CheckpointEntry e;
    e.shape = shape;
    e.values = std::vector<Real>(values.begin(), values.end());
    entries_.insert_or_assign(name, std::move(e));
}

const CheckpointEntry* Checkpoint::find(std::string_view name) const {
    auto it = entries_.find(name);
    return it == entries_.end() ? nullptr : &it->second;
}

const CheckpointEntry& Checkpoint::at(std::string_view name) const {
    const auto* e = find(name);
    if (e == nullptr) {
        throw std::out_of_range("checkpoint: no entry named '" + std::string(name) + "'");
    }
    return *e;
}

bool Checkpoint::has_prefix(std::string_view prefix) const {
    auto it = entries_.lower_bound(prefix);
    return it != entries_.end() && std::string_view(it->first).starts_with(prefix);
}

void Checkpoint::write(std::ostream& os) const {
    os.write(kMagic, sizeof(kMagic));
    put_raw<std::uint32_t>(os, kVersion);
    put_raw<std::uint32_t>(os, static_cast<std::uint32_t>(metadata.size()));
    for (const auto& [k, v] : metadata) {
        put_string(os, k);
        put_string(os, v);
    }
    put_raw<std::uint32_t>(os, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [name, e] : entries_) {
        put_string(os, name);
        put_raw<std::uint8_t>(os, static_cast<std::uint8_t>(e.precision()));
        put_raw<std::uint32_t>(os, static_cast<std::uint32_t>(e.shape.size()));
        for (auto d : e.shape) {
            put_raw<std::uint64_t>(os, d);
        }
        std::visit(
            [&](const auto& v) {
                os.write(reinterpret_cast<const char*>(v.data()),
                         static_cast<std::streamsize>(v.size() * sizeof(v[0])));
            },
            e.values);
    }
    if (!os) {
        throw std::runtime_error("checkpoint: write failed");
    }
}

Checkpoint Checkpoint::read(std::istream& is) {
    char magic[8];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("checkpoint: bad magic (not an LMAECKPT archive)");
    }
    const auto version = get_raw<std::uint32_t>(is, "version");
    if (version != kVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    }
    Checkpoint ckpt;
    const auto n_meta = get_raw<std::uint32_t>(is, "metadata count");
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        auto key = get_string(is, "metadata key");
        ckpt.metadata[key] = get_string(is, "metadata value");
    }
    const auto n_entries = get_raw<std::uint32_t>(is, "entry count");
    for (std::uint32_t i = 0; i < n_entries; ++i) {
        auto name = get_string(is, "entry name");
        const auto tag = get_raw<std::uint8_t>(is, "precision tag");
        const auto rank = get_raw<std::uint32_t>(is, "rank");
        if (rank == 0 || rank > kMaxRank) {
            throw FormatError("checkpoint: entry '" + name + "' has invalid rank " + std::to_string(rank));
        }
        CheckpointEntry e;
        for (std::uint32_t r = 0; r < rank; ++r) {
            const auto d = get_raw<std::uint64_t>(is, "dimension");
            if (d == 0) {
                throw FormatError("checkpoint: entry '" + name + "' has a zero dimension");
            }
            e.shape.push_back(static_cast<std::size_t>(d));
        }
        const auto n = shape_numel(e.shape);
        if (tag == static_cast<std::uint8_t>(Precision::f32)) {
            e.values = get_values<float>(is, n, name);
        } else if (tag == static_cast<std::uint8_t>(Precision::f64)) {
            e.values = get_values<double>(is, n, name);
        } else {
            throw FormatError("checkpoint: entry '" + name + "' has unknown precision tag " + std::to_string(tag));
        }
        ckpt.entries_.insert_or_assign(std::move(name), std::move(e));
    }
    return ckpt;
}

void Checkpoint::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    // Write-then-rename keeps the previous archive intact if writing fails.
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) {
            throw std::runtime_error("checkpoint: cannot open '" + tmp.string() + "' for writing");
        }
        write(os);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("checkpoint: cannot open '" + path.string() + "'");
    }
    return read(is);
}

template <typename Real>
void store_parameters(Checkpoint& ckpt, const ParameterSet<Real>& params, bool with_optimizer_state) {
    for (const auto& p : params.items()) {
        ckpt.put<Real>(p.name, p.value.shape(), p.value.data());
        if (with_optimizer_state) {
            ckpt.put<Real>(std::string(kOptimizerFirstMoment) + p.name, p.value.shape(), p.first_moment);
            ckpt.put<Real>(std::string(kOptimizerSecondMoment) + p.name, p.value.shape(), p.second_moment);
            ckpt.metadata[std::string(kOptimizerStep) + p.name] = std::to_string(p.step);
        }
    }
}

template <typename Real>
void load_parameters(ParameterSet<Real>& params, const Checkpoint& ckpt, std::string_view prefix,
                     bool with_optimizer_state) {
    for (auto& p : params.items()) {
        if (!p.name.starts_with(prefix)) {
            continue;
        }
        const auto* e = ckpt.find(p.name);
        if (e == nullptr) {
            throw std::out_of_range("checkpoint: missing parameter '" + p.name + "'");
        }
        if (e->shape != p.value.shape()) {
            throw ShapeError("checkpoint: parameter '" + p.name + "' has shape " + shape_to_string(e->shape) +
                             ", model expects " + shape_to_string(p.value.shape()));
        }
        auto values = e->template as<Real>();
        std::copy(values.begin(), values.end(), p.value.mutable_data().begin());
        if (with_optimizer_state) {
            p.first_moment = ckpt.at(std::string(kOptimizerFirstMoment) + p.name).template as<Real>();
            p.second_moment = ckpt.at(std::string(kOptimizerSecondMoment) + p.name).template as<Real>();
            auto it = ckpt.metadata.find(std::string(kOptimizerStep) + p.name);
            if (it == ckpt.metadata.end()) {
                throw std::out_of_range("checkpoint: missing optimizer step for '" + p.name + "'");
            }
            p.step = std::stoull(it->second);
        }
    }
}

template void Checkpoint::put<float>(const std::string&, const Shape&, std::span<const float>);
template void Checkpoint::put<double>(const std::string&, const Shape&, std::span<const double>);
template void store_parameters<float>(Checkpoint&, const ParameterSet<float>&, bool);
template void store_parameters<double>(Checkpoint&, const ParameterSet<double>&, bool);
template void load_parameters<float>(ParameterSet<float>&, const Checkpoint&, std::string_view, bool);
template void load_parameters<double>(ParameterSet<double>&, const Checkpoint&, std::string_view, bool);

}  // namespace lmae
