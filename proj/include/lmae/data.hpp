#pragma once

// Longitudinal datasets: a synthetic fundus-like generator, the JSONL
// manifest format for image sequences on disk, patient-level splits and
// (context visits -> next-visit grade) windows.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "lmae/embeddings.hpp"
#include "lmae/image.hpp"

namespace lmae {

struct VisitRecord {
    Image image;
    double t_years = 0.0;
    int grade = 0;
};

struct SequenceRecord {
    std::string patient_id;
    std::vector<VisitRecord> visits;  // strictly increasing t_years
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SyntheticGenConfig {
    std::size_t n_patients = 200;
    std::size_t image_size = 32;
    std::size_t patch_size = 8;  // only checked for divisibility
    std::uint64_t seed = 0;
    std::size_t min_visits = 4;
    std::size_t max_visits = 8;
    double gap_min = 0.5;  // years
    double gap_max = 2.5;
    /// Per-patient progression hazard (grade steps per year), log-uniform in this range.
    double hazard_min = 0.05;
    double hazard_max = 1.0;
    double noise_sd = 0.02;

    void validate() const;
};

/// Geometry of the synthetic fundus, shared with lesion detectors.
struct FundusLayout {
    double center = 0.0;  // pixel coordinate of the disk center (both axes)
    double radius = 0.0;
    float disk_level = 0.0f;
    float lesion_peak = 0.0f;

    static FundusLayout for_size(std::size_t image_size);
};

/// Deterministic in config.seed. Each patient gets a log-uniform hazard;
/// faster progressors are seen more often (shorter gaps), and grades follow
/// a monotone Poisson jump process.
///
/// Images: a dark disk; grade >= 1 adds two small bright dots near the
/// center; every grade above 1 adds two more bright blobs, further out and
/// larger, in their own angular slots (positions fixed per patient).
std::vector<SequenceRecord> generate_synthetic(const SyntheticGenConfig& config);

/// Reads one JSON object per line:
///   {"patient_id": str, "visits": [{"image": path, "t_years": num, "grade": 0..4}, ...]}
/// Image paths are relative to the manifest directory. Visits come back sorted by time.
std::vector<SequenceRecord> load_manifest(const std::filesystem::path& path);

/// Writes <dir>/images/*.pgm|ppm and <dir>/manifest.jsonl; returns the manifest path.
std::filesystem::path write_dataset(const std::filesystem::path& dir, const std::vector<SequenceRecord>& records);

struct SplitFractions {
    double train = 0.6;
    double val = 0.2;
    double test = 0.2;
};

struct DatasetSplit {
    std::vector<SequenceRecord> train;
    std::vector<SequenceRecord> val;
    std::vector<SequenceRecord> test;
};

/// Shuffles distinct patient ids with `seed`, then gives floor(fraction * n)
/// patients to val and test and the remainder to train.
DatasetSplit split_patients(const std::vector<SequenceRecord>& records, const SplitFractions& fractions,
                            std::uint64_t seed);

struct Window {
    std::string patient_id;
    std::vector<VisitRecord> context;
    int target = 0;
    double target_t_years = 0.0;
};

inline constexpr double kDefaultHorizonYears = 3.0;
inline constexpr std::size_t kDefaultContextFrames = 3;

/// One window per visit i >= context - 1 whose successor lies within
/// `horizon_years` of it: context = visits[i - context + 1 .. i], target = grade of visit i + 1.
std::vector<Window> build_windows(const SequenceRecord& sequence, std::size_t context,
                                  double horizon_years = kDefaultHorizonYears);
std::vector<Window> build_windows(const std::vector<SequenceRecord>& sequences, std::size_t context,
                                  double horizon_years = kDefaultHorizonYears);

/// Patchifies the context frames of a window.
PatchSequence to_patch_sequence(const std::vector<VisitRecord>& visits, const PatchGeometry& geometry);

}  // namespace lmae
