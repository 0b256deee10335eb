#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include <json.hpp>

#include "../tools/cli.hpp"
#include "lmae/checkpoint.hpp"
#include "lmae/image.hpp"

using namespace lmae;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = 0;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "lmae");
    std::vector<const char*> argv;
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    std::ostringstream out, err;
    const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("lmae_test_cli_" + std::to_string(::getpid()) + "_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::map<std::string, std::string> parse_dump(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') {
            continue;
        }
        const auto eq = line.find(" = ");
        if (eq != std::string::npos) {
            kv[line.substr(0, eq)] = line.substr(eq + 3);
        } else if (line.back() == '=') {
            kv[line.substr(0, line.size() - 2)] = "";
        }
    }
    return kv;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<nlohmann::json> read_jsonl(const fs::path& p) {
    std::vector<nlohmann::json> out;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) {
            out.push_back(nlohmann::json::parse(line));
        }
    }
    return out;
}

}  // namespace

TEST(Cli, ConfigFileErrorsNameTheLine) {
    const auto dir = scratch_dir("cfgerr");
    std::ofstream(dir / "bad.cfg") << "seed = 1\n# comment\nbogus_key = 2\n";
    auto r = run({"config", "dump", "--config", (dir / "bad.cfg").string()});
    EXPECT_EQ(r.code, kExitInvalid);
    EXPECT_NE(r.err.find("bad.cfg:3"), std::string::npos) << r.err;

    std::ofstream(dir / "dup.cfg") << "seed = 1\nseed = 2\n";
    r = run({"config", "dump", "--config", (dir / "dup.cfg").string()});
    EXPECT_EQ(r.code, kExitInvalid);
    EXPECT_NE(r.err.find("dup.cfg:2"), std::string::npos) << r.err;

    std::ofstream(dir / "type.cfg") << "d_model = wide\n";
    r = run({"pretrain", "--config", (dir / "type.cfg").string()});
    EXPECT_EQ(r.code, kExitInvalid);
    EXPECT_NE(r.err.find("type.cfg:1"), std::string::npos) << r.err;
    fs::remove_all(dir);
}

TEST(Cli, LayersApplyInPrecedenceOrder) {
    const auto dir = scratch_dir("precedence");
    std::ofstream(dir / "run.cfg") << "n_patients = 20\ndata_dir = from_file\nout = from_file\n";
    ::setenv("LMAE_DATA_DIR", "from_env", 1);
    ::setenv("LMAE_OUT", "from_env", 1);
    const auto r = run({"config", "dump", "--preset", "smoke", "--config", (dir / "run.cfg").string(), "--out",
                        "from_flag"});
    ::unsetenv("LMAE_DATA_DIR");
    ::unsetenv("LMAE_OUT");
    ASSERT_EQ(r.code, kExitOk) << r.err;
    const auto kv = parse_dump(r.out);
    EXPECT_EQ(kv.at("d_model"), "16");         // preset over default
    EXPECT_EQ(kv.at("n_patients"), "20");      // file over preset
    EXPECT_EQ(kv.at("data_dir"), "from_env");  // environment over file
    EXPECT_EQ(kv.at("out"), "from_flag");      // flag over environment
    EXPECT_EQ(kv.at("mask_strategy"), "prog_aware");
    fs::remove_all(dir);
}

TEST(Cli, DumpReloadsToTheSameConfig) {
    const auto dir = scratch_dir("dump");
    const auto first = run({"config", "dump", "--preset", "desk", "--seed", "9"});
    ASSERT_EQ(first.code, kExitOk);
    std::ofstream(dir / "dumped.cfg") << first.out;
    const auto second = run({"config", "dump", "--config", (dir / "dumped.cfg").string()});
    ASSERT_EQ(second.code, kExitOk) << second.err;
    EXPECT_EQ(first.out, second.out);
    fs::remove_all(dir);
}

TEST(Cli, InvalidArgumentsExitWithUsageCode) {
    auto r = run({"pretrain", "--image_size", "100", "--patch_size", "16"});
    EXPECT_EQ(r.code, kExitInvalid);
    EXPECT_NE(r.err.find("100"), std::string::npos) << r.err;
    EXPECT_EQ(run({"pretrain", "--no-such-flag", "1"}).code, kExitInvalid);
    EXPECT_EQ(run({"frobnicate"}).code, kExitInvalid);
    EXPECT_EQ(run({"pretrain", "--preset", "nonexistent"}).code, kExitInvalid);
    EXPECT_EQ(run({"evaluate", "--preset", "smoke"}).code, kExitInvalid);  // no checkpoint
}

TEST(Cli, GenerateDataIsByteIdenticalAcrossRuns) {
    const auto a = scratch_dir("gen_a");
    const auto b = scratch_dir("gen_b");
    ASSERT_EQ(run({"generate-data", "--preset", "smoke", "--data_dir", a.string()}).code, kExitOk);
    ASSERT_EQ(run({"generate-data", "--preset", "smoke", "--data_dir", b.string()}).code, kExitOk);
    EXPECT_EQ(slurp(a / "manifest.jsonl"), slurp(b / "manifest.jsonl"));
    std::size_t images = 0;
    for (const auto& e : fs::directory_iterator(a / "images")) {
        EXPECT_EQ(slurp(e.path()), slurp(b / "images" / e.path().filename()));
        ++images;
    }
    EXPECT_GT(images, 12u * 4u - 1u);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Cli, ResumeContinuesTheStepCounter) {
    const auto once = scratch_dir("resume_once");
    const auto twice = scratch_dir("resume_twice");
    const std::vector<std::string> common{"pretrain", "--preset", "smoke", "--pretrain_schedule", "constant"};
    auto args = common;
    args.insert(args.end(), {"--pretrain_epochs", "4", "--out", once.string()});
    ASSERT_EQ(run(args).code, kExitOk);

    args = common;
    args.insert(args.end(), {"--pretrain_epochs", "2", "--out", twice.string()});
    ASSERT_EQ(run(args).code, kExitOk);
    const auto steps_after_two = read_jsonl(twice / "pretrain_log.jsonl").back()["step"].get<std::size_t>();
    args = common;
    args.insert(args.end(), {"--pretrain_epochs", "4", "--out", twice.string(), "--resume",
                             (twice / "pretrain_last.ckpt").string()});
    const auto r = run(args);
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_NE(r.out.find("resuming at step"), std::string::npos);

    const auto log = read_jsonl(twice / "pretrain_log.jsonl");
    const auto full = read_jsonl(once / "pretrain_log.jsonl");
    EXPECT_EQ(log.size(), full.size());
    EXPECT_GT(steps_after_two, 0u);
    std::size_t first_resumed = 0;
    for (std::size_t i = 1; i < log.size(); ++i) {
        if (log[i]["epoch"].get<int>() == 3 && log[i - 1]["epoch"].get<int>() == 2) {
            first_resumed = log[i]["step"].get<std::size_t>();
        }
    }
    EXPECT_EQ(first_resumed, steps_after_two);

    const auto a = Checkpoint::load(once / "pretrain.ckpt");
    const auto b = Checkpoint::load(twice / "pretrain.ckpt");
    for (const auto& [name, entry] : a.entries()) {
        EXPECT_EQ(entry.as<double>(), b.at(name).as<double>()) << name;
    }
    EXPECT_EQ(a.metadata.at("best_val"), b.metadata.at("best_val"));

    args = common;
    args.insert(args.end(), {"--out", twice.string(), "--resume", (twice / "pretrain.ckpt").string()});
    EXPECT_EQ(run(args).code, kExitInvalid);  // best snapshot has no train state
    fs::remove_all(once);
    fs::remove_all(twice);
}

TEST(Cli, MaskPreviewGrowsWithSeverity) {
    const auto dir = scratch_dir("preview");
    const auto r = run({"mask-preview", "--preset", "desk", "--out", dir.string(), "--preview_draws", "200"});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    std::ifstream in(dir / "mask_preview.json");
    const auto j = nlohmann::json::parse(in);
    ASSERT_EQ(j["frames"].size(), 5u);
    double prev = -1.0;
    for (const auto& f : j["frames"]) {
        const double m = f["mean_masked"].get<double>();
        EXPECT_GE(m, prev);
        prev = m;
        const auto img = read_pnm(dir / f["image"].get<std::string>());
        EXPECT_EQ(img.height, 32u);
    }
    fs::remove_all(dir);
}

TEST(Cli, PipelineProducesAnEvaluationRecord) {
    const auto dir = scratch_dir("pipeline");
    const std::vector<std::string> base{"--preset", "smoke", "--out", dir.string(), "--pretrain_epochs", "2",
                                        "--finetune_epochs", "2"};
    auto args = base;
    args.insert(args.begin(), "pretrain");
    ASSERT_EQ(run(args).code, kExitOk);
    const auto pre = Checkpoint::load(dir / "pretrain.ckpt");
    EXPECT_EQ(pre.metadata.at("kind"), "pretrain");
    EXPECT_TRUE(pre.metadata.count("input_norm"));

    args = base;
    args.insert(args.begin(), "finetune");
    args.insert(args.end(), {"--checkpoint", (dir / "pretrain.ckpt").string()});
    auto r = run(args);
    ASSERT_EQ(r.code, kExitOk) << r.err;

    r = run({"evaluate", "--preset", "smoke", "--out", dir.string(), "--checkpoint",
             (dir / "classifier.ckpt").string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    r = run({"evaluate", "--preset", "smoke", "--out", dir.string(), "--checkpoint",
             (dir / "classifier.ckpt").string()});
    ASSERT_EQ(r.code, kExitOk) << r.err;
    const auto records = read_jsonl(dir / "eval_report.jsonl");
    ASSERT_EQ(records.size(), 2u);
    EXPECT_EQ(records[0]["fingerprint"], records[1]["fingerprint"]);
    EXPECT_EQ(records[0].dump(), records[1].dump());
    EXPECT_TRUE(records[0].contains("samples"));

    r = run({"evaluate", "--preset", "smoke", "--out", dir.string(), "--checkpoint",
             (dir / "pretrain.ckpt").string()});
    EXPECT_EQ(r.code, kExitInvalid);
    fs::remove_all(dir);
}

TEST(Cli, GradcheckPasses) {
    const auto r = run({"gradcheck"});
    EXPECT_EQ(r.code, kExitOk) << r.out;
    EXPECT_NE(r.out.find("all gradient checks passed"), std::string::npos);
}
