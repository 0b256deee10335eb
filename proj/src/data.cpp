#include "lmae/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lmae/rng.hpp"

namespace lmae {

namespace {

constexpr int kMaxGrade = 4;
constexpr std::size_t kAngularSlots = 8;

int poisson(Rng& rng, double mean) {
    // Knuth's product method; means here stay small.
    const double limit = std::exp(-mean);
    int k = 0;
    double p = rng.uniform();
    while (p > limit) {
        ++k;
        p *= rng.uniform();
    }
    return k;
}

struct Blob {
    double y = 0.0;
    double x = 0.0;
    double sigma = 1.0;
};

struct PatientLesions {
    std::vector<Blob> central;                 // shown from grade 1
    std::vector<std::vector<Blob>> by_level;  // by_level[k - 2] shown from grade k
};

Blob polar_blob(const FundusLayout& f, double ecc, double angle, double sigma) {
    return {f.center + ecc * f.radius * std::sin(angle), f.center + ecc * f.radius * std::cos(angle), sigma};
}

PatientLesions draw_lesions(const FundusLayout& f, Rng& rng) {
    PatientLesions out;
    const double a0 = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double a1 = a0 + std::numbers::pi / 2.0 + rng.uniform(0.0, std::numbers::pi);
    out.central.push_back(polar_blob(f, rng.uniform(0.1, 0.25), a0, 0.6));
    out.central.push_back(polar_blob(f, rng.uniform(0.1, 0.25), a1, 0.6));

    std::vector<std::size_t> slots(kAngularSlots);
    for (std::size_t i = 0; i < kAngularSlots; ++i) {
        slots[i] = i;
    }
    for (std::size_t i = kAngularSlots - 1; i > 0; --i) {
        std::swap(slots[i], slots[static_cast<std::size_t>(rng.below(i + 1))]);
    }
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi / kAngularSlots);
    for (int level = 2; level <= kMaxGrade; ++level) {
        const auto k = static_cast<std::size_t>(level - 2);
        const double ecc = 0.6 + 0.12 * static_cast<double>(k);
        const double sigma = 0.7 + 0.2 * static_cast<double>(k);
        std::vector<Blob> blobs;
        for (std::size_t j = 0; j < 2; ++j) {
            const double angle = phase + 2.0 * std::numbers::pi * static_cast<double>(slots[2 * k + j]) / kAngularSlots;
            blobs.push_back(polar_blob(f, ecc + rng.uniform(-0.02, 0.02), angle, sigma));
        }
        out.by_level.push_back(std::move(blobs));
    }
    return out;
}

Image render(std::size_t size, const FundusLayout& f, const PatientLesions& lesions, int grade, double noise_sd,
             Rng& rng) {
    std::vector<Blob> shown;
    if (grade >= 1) {
        shown = lesions.central;
    }
    for (int level = 2; level <= grade; ++level) {
        const auto& extra = lesions.by_level[static_cast<std::size_t>(level - 2)];
        shown.insert(shown.end(), extra.begin(), extra.end());
    }
    Image img(size, size, 1);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double dy = static_cast<double>(y) - f.center;
            const double dx = static_cast<double>(x) - f.center;
            const double edge = std::clamp(f.radius + 0.5 - std::sqrt(dx * dx + dy * dy), 0.0, 1.0);
            double v = f.disk_level * edge;
            for (const auto& b : shown) {
                const double by = static_cast<double>(y) - b.y;
                const double bx = static_cast<double>(x) - b.x;
                v += f.lesion_peak * std::exp(-(by * by + bx * bx) / (2.0 * b.sigma * b.sigma));
            }
            if (noise_sd > 0.0) {
                v += rng.normal(0.0, noise_sd);
            }
            img.at(y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return img;
}

std::string patient_name(std::size_t i) {
    std::ostringstream os;
    os << 'P';
    os.width(4);
    os.fill('0');
    os << i;
    return os.str();
}

}  // namespace

void SyntheticGenConfig::validate() const {
    if (image_size == 0 || patch_size == 0 || image_size % patch_size != 0) {
        throw std::invalid_argument("synthetic data: image size " + std::to_string(image_size) +
                                    " is not a positive multiple of patch size " + std::to_string(patch_size));
    }
    if (image_size < 16) {
        throw std::invalid_argument("synthetic data: image size must be at least 16");
    }
    if (min_visits == 0 || min_visits > max_visits) {
        throw std::invalid_argument("synthetic data: need 0 < min_visits <= max_visits");
    }
    if (!(gap_min > 0.0 && gap_min <= gap_max)) {
        throw std::invalid_argument("synthetic data: need 0 < gap_min <= gap_max");
    }
    if (!(hazard_min > 0.0 && hazard_min <= hazard_max)) {
        throw std::invalid_argument("synthetic data: need 0 < hazard_min <= hazard_max");
    }
    if (!(noise_sd >= 0.0)) {
        throw std::invalid_argument("synthetic data: noise_sd must be nonnegative");
    }
}

FundusLayout FundusLayout::for_size(std::size_t image_size) {
    FundusLayout f;
    f.center = (static_cast<double>(image_size) - 1.0) / 2.0;
    f.radius = 0.45 * static_cast<double>(image_size);
    f.disk_level = 0.3f;
    f.lesion_peak = 0.6f;
    return f;
}

std::vector<SequenceRecord> generate_synthetic(const SyntheticGenConfig& config) {
    config.validate();
    const auto layout = FundusLayout::for_size(config.image_size);
    const Rng root = Rng(config.seed).substream("data");
    const double log_lo = std::log(config.hazard_min);
    const double log_hi = std::log(config.hazard_max);
    std::vector<SequenceRecord> out;
    out.reserve(config.n_patients);
    for (std::size_t p = 0; p < config.n_patients; ++p) {
        Rng rng = root.substream("patient", p);
        const double u = rng.uniform();
        const double hazard = std::exp(log_lo + u * (log_hi - log_lo));
        const double mean_gap = config.gap_max - (config.gap_max - config.gap_min) * u;
        const auto visits = static_cast<std::size_t>(
            rng.integer(static_cast<int>(config.min_visits), static_cast<int>(config.max_visits)));
        const auto lesions = draw_lesions(layout, rng);

        SequenceRecord rec;
        rec.patient_id = patient_name(p);
        double t = rng.uniform(0.0, 2.0);
        int grade = std::min(kMaxGrade, poisson(rng, hazard * rng.uniform(0.0, 3.0)));
        for (std::size_t v = 0; v < visits; ++v) {
            if (v > 0) {
                const double gap = std::clamp(mean_gap + rng.uniform(-0.3, 0.3), config.gap_min, config.gap_max);
                t += gap;
                grade = std::min(kMaxGrade, grade + poisson(rng, hazard * gap));
            }
            rec.visits.push_back({render(config.image_size, layout, lesions, grade, config.noise_sd, rng), t, grade});
        }
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<SequenceRecord> load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open manifest " + path.string());
    }
    const auto base = path.parent_path();
    std::vector<SequenceRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
        SequenceRecord rec;
        try {
            const auto j = nlohmann::json::parse(line);
            rec.patient_id = j.at("patient_id").get<std::string>();
            for (const auto& v : j.at("visits")) {
                VisitRecord visit;
                visit.t_years = v.at("t_years").get<double>();
                visit.grade = v.at("grade").get<int>();
                if (visit.grade < 0 || visit.grade > kMaxGrade) {
                    throw DataError("grade " + std::to_string(visit.grade) + " outside 0..4");
                }
                if (!std::isfinite(visit.t_years)) {
                    throw DataError("non-finite t_years");
                }
                const auto image_path = base / v.at("image").get<std::string>();
                if (!std::filesystem::exists(image_path)) {
                    throw DataError("missing image " + image_path.string());
                }
                visit.image = read_pnm(image_path);
                rec.visits.push_back(std::move(visit));
            }
        } catch (const nlohmann::json::exception& e) {
            throw DataError(where + "malformed record: " + e.what());
        } catch (const std::exception& e) {
            throw DataError(where + e.what());
        }
        std::stable_sort(rec.visits.begin(), rec.visits.end(),
                         [](const VisitRecord& a, const VisitRecord& b) { return a.t_years < b.t_years; });
        for (std::size_t i = 1; i < rec.visits.size(); ++i) {
            if (rec.visits[i].t_years == rec.visits[i - 1].t_years) {
                throw DataError(where + "patient " + rec.patient_id + " has two visits at t = " +
                                std::to_string(rec.visits[i].t_years));
            }
        }
        out.push_back(std::move(rec));
    }
    return out;
}

std::filesystem::path write_dataset(const std::filesystem::path& dir, const std::vector<SequenceRecord>& records) {
    std::filesystem::create_directories(dir / "images");
    const auto manifest = dir / "manifest.jsonl";
    std::ofstream out(manifest, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write " + manifest.string());
    }
    for (const auto& rec : records) {
        nlohmann::json visits = nlohmann::json::array();
        for (std::size_t k = 0; k < rec.visits.size(); ++k) {
            const auto& v = rec.visits[k];
            const std::string ext = v.image.channels == 3 ? ".ppm" : ".pgm";
            const std::string rel = "images/" + rec.patient_id + "_v" + std::to_string(k) + ext;
            write_pnm(dir / rel, v.image);
            visits.push_back({{"image", rel}, {"t_years", v.t_years}, {"grade", v.grade}});
        }
        const nlohmann::json line = {{"patient_id", rec.patient_id}, {"visits", visits}};
        out << line.dump() << '\n';
    }
    if (!out) {
        throw DataError("failed writing " + manifest.string());
    }
    return manifest;
}

DatasetSplit split_patients(const std::vector<SequenceRecord>& records, const SplitFractions& fractions,
                            std::uint64_t seed) {
    const double total = fractions.train + fractions.val + fractions.test;
    if (std::abs(total - 1.0) > 1e-9 || fractions.train < 0 || fractions.val < 0 || fractions.test < 0) {
        throw std::invalid_argument("split_patients: fractions must be nonnegative and sum to 1");
    }
    std::vector<std::string> ids;
    std::set<std::string> seen;
    for (const auto& r : records) {
        if (seen.insert(r.patient_id).second) {
            ids.push_back(r.patient_id);
        }
    }
    const std::size_t n = ids.size();
    if (n < 3) {
        throw std::invalid_argument("split_patients: need at least 3 patients, got " + std::to_string(n));
    }
    Rng rng = Rng(seed).substream("split");
    for (std::size_t i = n - 1; i > 0; --i) {
        std::swap(ids[i], ids[static_cast<std::size_t>(rng.below(i + 1))]);
    }
    const auto count = [n](double f) {
        return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9));
    };
    const std::size_t n_val = count(fractions.val);
    const std::size_t n_test = count(fractions.test);
    std::map<std::string, int> where;  // 0 train, 1 val, 2 test
    for (std::size_t i = 0; i < n; ++i) {
        where[ids[i]] = i < n_val ? 1 : (i < n_val + n_test ? 2 : 0);
    }
    DatasetSplit split;
    for (const auto& r : records) {
        switch (where.at(r.patient_id)) {
            case 1:
                split.val.push_back(r);
                break;
            case 2:
                split.test.push_back(r);
                break;
            default:
                split.train.push_back(r);
        }
    }
    return split;
}

std::vector<Window> build_windows(const SequenceRecord& sequence, std::size_t context, double horizon_years) {
    if (context == 0) {
        throw std::invalid_argument("build_windows: context length must be at least 1");
    }
    std::vector<Window> out;
    const auto& v = sequence.visits;
    for (std::size_t i = context - 1; i + 1 < v.size(); ++i) {
        if (v[i + 1].t_years - v[i].t_years > horizon_years) {
            continue;
        }
        Window w;
        w.patient_id = sequence.patient_id;
        w.context.assign(v.begin() + static_cast<std::ptrdiff_t>(i + 1 - context),
                         v.begin() + static_cast<std::ptrdiff_t>(i + 1));
        w.target = v[i + 1].grade;
        w.target_t_years = v[i + 1].t_years;
        out.push_back(std::move(w));
    }
    return out;
}

std::vector<Window> build_windows(const std::vector<SequenceRecord>& sequences, std::size_t context,
                                  double horizon_years) {
    std::vector<Window> out;
    for (const auto& s : sequences) {
        auto w = build_windows(s, context, horizon_years);
        std::move(w.begin(), w.end(), std::back_inserter(out));
    }
    return out;
}

PatchSequence to_patch_sequence(const std::vector<VisitRecord>& visits, const PatchGeometry& geometry) {
    PatchSequence seq;
    for (const auto& v : visits) {
        if (v.image.height != geometry.image_size || v.image.width != geometry.image_size ||
            v.image.channels != geometry.channels) {
            throw ShapeError("image " + std::to_string(v.image.height) + "x" + std::to_string(v.image.width) + "x" +
                             std::to_string(v.image.channels) + " does not match the configured " +
                             std::to_string(geometry.image_size) + "x" + std::to_string(geometry.image_size) + "x" +
                             std::to_string(geometry.channels));
        }
        auto rows = patchify(v.image, geometry);
        seq.patches.insert(seq.patches.end(), rows.begin(), rows.end());
        seq.times.push_back(v.t_years);
        seq.grades.push_back(v.grade);
    }
    return seq;
}

}  // namespace lmae
