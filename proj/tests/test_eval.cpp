#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>
#include <vector>

#include "lmae/eval.hpp"

using namespace lmae;

namespace {

// O(n^2) Mann-Whitney count.
double pair_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (y[i] != 1) {
            continue;
        }
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j] != 0) {
                continue;
            }
            pairs += 1.0;
            wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    }
    return wins / pairs;
}

PipelineConfig tiny_pipeline() {
    PipelineConfig pc;
    pc.data.n_patients = 12;
    pc.data.image_size = 16;
    pc.data.patch_size = 8;
    pc.d_model = 16;
    pc.depth = 2;
    pc.heads = 2;
    pc.pretrain.epochs = 1;
    pc.finetune.epochs = 1;
    return pc;
}

}  // namespace

TEST(Auc, HandWorkedCase) {
    const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
    const std::vector<int> y{0, 0, 1, 1};
    EXPECT_DOUBLE_EQ(*auc(s, y), 0.75);
}

TEST(Auc, TiesEarnHalfCredit) {
    EXPECT_DOUBLE_EQ(*auc(std::vector<double>{0.5, 0.5}, std::vector<int>{0, 1}), 0.5);
    const std::vector<double> s{0.2, 0.5, 0.5, 0.9};
    const std::vector<int> y{0, 0, 1, 1};
    EXPECT_DOUBLE_EQ(*auc(s, y), (1.0 + 1.0 + 0.5 + 1.0) / 4.0);
}

TEST(Auc, SingleClassHasNoValue) {
    EXPECT_FALSE(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}).has_value());
    EXPECT_FALSE(auc(std::vector<double>{}, std::vector<int>{}).has_value());
    EXPECT_THROW((void)auc(std::vector<double>{0.1}, std::vector<int>{0, 1}), std::invalid_argument);
}

TEST(Auc, ComplementAndOracleAgreementAcrossBothCodePaths) {
    Rng rng(3);
    for (std::size_t n : {50u, 12000u}) {
        std::vector<double> s(n), neg(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = rng.uniform() < 0.3 ? 1 : 0;
            // coarse rounding forces many ties
            s[i] = std::round((rng.uniform() + 0.3 * y[i]) * 20.0) / 20.0;
            neg[i] = -s[i];
        }
        const double a = *auc(s, y);
        EXPECT_NEAR(a, pair_auc(s, y), 1e-12) << n;
        EXPECT_NEAR(*auc(neg, y), 1.0 - a, 1e-12) << n;
    }
}

TEST(ThresholdScore, TailMassIsMonotone) {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> p(kNumGrades);
        double total = 0.0;
        for (auto& v : p) {
            v = rng.uniform();
            total += v;
        }
        for (auto& v : p) {
            v /= total;
        }
        EXPECT_NEAR(threshold_score(p, 0), 1.0, 1e-12);
        EXPECT_GE(threshold_score(p, 1), threshold_score(p, 2));
        EXPECT_GE(threshold_score(p, 2), threshold_score(p, 3));
        EXPECT_NEAR(threshold_score(p, 3), p[3] + p[4], 1e-15);
    }
}

TEST(EvaluatePredictions, CountsAndPerfectRanking) {
    std::vector<std::array<double, kNumGrades>> probs;
    std::vector<int> targets;
    for (int g = 0; g < 5; ++g) {
        std::array<double, kNumGrades> p{};
        p[static_cast<std::size_t>(g)] = 1.0;
        probs.push_back(p);
        targets.push_back(g);
    }
    const auto r = evaluate_predictions(probs, targets);
    EXPECT_EQ(r.samples, 5u);
    EXPECT_EQ(r.mild_plus().positives, 4u);
    EXPECT_EQ(r.moderate_plus().positives, 3u);
    EXPECT_EQ(r.severe_plus().positives, 2u);
    EXPECT_EQ(r.severe_plus().negatives, 3u);
    for (const auto& t : r.tasks) {
        EXPECT_DOUBLE_EQ(*t.auc, 1.0);
    }
    const auto j = r.to_json();
    EXPECT_TRUE(j.contains("unit"));
}

TEST(Grid, PresetSizesAndUniqueIds) {
    EXPECT_EQ(grid_preset("table2").size(), 18u);
    EXPECT_EQ(grid_preset("table3").size(), 8u);
    EXPECT_EQ(grid_preset("table4").size(), 4u);
    EXPECT_EQ(grid_preset("trend").size(), 3u);
    EXPECT_EQ(grid_preset("scratch").size(), 3u);
    for (const char* name : {"table2", "table3", "table4", "full", "trend", "scratch"}) {
        std::set<std::string> ids;
        for (const auto& c : grid_preset(name)) {
            EXPECT_TRUE(ids.insert(c.id()).second) << name << " " << c.id();
        }
    }
    for (const auto& c : grid_preset("scratch")) {
        EXPECT_FALSE(c.mask.has_value());
        EXPECT_FALSE(c.policy.any());
    }
    EXPECT_THROW((void)grid_preset("table9"), std::invalid_argument);
}

TEST(PrepareData, RunsStatisticsAndDisjointSplits) {
    SequenceRecord r;
    r.patient_id = "a";
    for (int v = 0; v < 5; ++v) {
        r.visits.push_back({Image(16, 16, 1, 0.1f * static_cast<float>(v)), static_cast<double>(v), 0});
    }
    const auto runs = contiguous_runs({r}, 3, PatchGeometry{16, 8, 1});
    ASSERT_EQ(runs.size(), 3u);
    EXPECT_EQ(runs[2].times.front(), 2.0);

    const auto norm = pixel_statistics({r});
    EXPECT_NEAR(norm.mean, 0.2, 1e-6);
    EXPECT_NEAR(norm.stddev, std::sqrt(0.02), 1e-6);  // values 0, .1, .2, .3, .4

    const auto pc = tiny_pipeline();
    const auto data = load_pipeline_data(pc);
    EXPECT_FALSE(data.train.empty());
    EXPECT_FALSE(data.pretrain_train.empty());
    EXPECT_GT(data.input_norm.stddev, 0.0);
    for (const auto& w : data.train) {
        EXPECT_EQ(w.context.frames(), pc.context_frames);
    }
}

TEST(Experiment, ResultsIndependentOfWorkerCount) {
    ExperimentConfig ec;
    ec.pipeline = tiny_pipeline();
    ec.cells = grid_preset("trend");
    ec.cells.push_back(grid_preset("scratch").front());
    ec.seeds = {0, 1};
    ec.workers = 1;
    const auto serial = run_experiment(ec);
    ec.workers = 3;
    const auto parallel = run_experiment(ec);
    ASSERT_EQ(serial.size(), 8u);
    ASSERT_EQ(parallel.size(), serial.size());
    std::ostringstream a, b;
    write_results_jsonl(a, serial, ec.pipeline);
    write_results_jsonl(b, parallel, ec.pipeline);
    EXPECT_EQ(a.str(), b.str());
    for (const auto& r : serial) {
        EXPECT_TRUE(r.error.empty()) << r.error;
        EXPECT_TRUE(r.report.has_value());
        EXPECT_EQ(r.pretrain_best_val.has_value(), r.cell.mask.has_value());
    }
    EXPECT_NE(render_results_table(serial).find("time_aware"), std::string::npos);
}
