#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <sstream>

#include "lmae/checkpoint.hpp"
#include "lmae/optim.hpp"
#include "lmae/ops.hpp"

using namespace lmae;

namespace {

ParameterSet<float> sample_params() {
    ParameterSet<float> p;
    p.add("a.weight", {2, 3}, {1.0f, -0.0f, 3.25f, 1e-30f, -7.5f, std::numeric_limits<float>::denorm_min()});
    p.add("a.bias", {3}, {0.1f, 0.2f, 0.3f});
    return p;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
    auto params = sample_params();
    Checkpoint ck;
    store_parameters(ck, params, false);
    const std::vector<double> d{std::acos(-1.0), -1e-300, 12345.678};
    ck.put<double>("extra", {3}, d);
    ck.metadata["kind"] = "test";
    std::stringstream ss;
    ck.write(ss);
    const auto back = Checkpoint::read(ss);
    EXPECT_EQ(back.metadata.at("kind"), "test");
    const auto w = back.at("a.weight").as<float>();
    const auto orig = params.at("a.weight").value.data();
    ASSERT_EQ(w.size(), orig.size());
    EXPECT_EQ(std::memcmp(w.data(), orig.data(), w.size() * sizeof(float)), 0);
    EXPECT_EQ(back.at("extra").precision(), Precision::f64);
    EXPECT_EQ(back.at("extra").as<double>(), d);
}

TEST(Checkpoint, SerializationIsDeterministic) {
    auto params = sample_params();
    Checkpoint a, b;
    store_parameters(a, params, true);
    store_parameters(b, params, true);
    std::stringstream sa, sb;
    a.write(sa);
    b.write(sb);
    EXPECT_EQ(sa.str(), sb.str());
}

TEST(Checkpoint, OptimizerStateRoundTrips) {
    ParameterSet<double> p;
    auto w = p.add("w", {2}, {1.0, 2.0});
    backward(sum(mul(w, w)));
    adamw_step(p, 0.1, AdamWConfig{});
    Checkpoint ck;
    store_parameters(ck, p, true);
    ParameterSet<double> q;
    q.add("w", {2}, {0.0, 0.0});
    load_parameters(q, ck, {}, true);
    EXPECT_EQ(q.at("w").first_moment, p.at("w").first_moment);
    EXPECT_EQ(q.at("w").second_moment, p.at("w").second_moment);
    EXPECT_EQ(q.at("w").step, 1u);
}

TEST(Checkpoint, BadMagicAndTruncationAreFormatErrors) {
    std::stringstream junk("NOTACKPT....");
    EXPECT_THROW((void)Checkpoint::read(junk), FormatError);
    Checkpoint ck;
    store_parameters(ck, sample_params(), false);
    std::stringstream ss;
    ck.write(ss);
    std::string bytes = ss.str();
    std::stringstream cut(bytes.substr(0, bytes.size() - 5));
    EXPECT_THROW((void)Checkpoint::read(cut), FormatError);
}

TEST(Checkpoint, LoadRejectsMissingAndMisshapen) {
    Checkpoint ck;
    store_parameters(ck, sample_params(), false);
    ParameterSet<float> wrong;
    wrong.add("a.weight", {3, 2}, std::vector<float>(6, 0.0f));
    EXPECT_THROW(load_parameters(wrong, ck), ShapeError);
    ParameterSet<float> missing;
    missing.add("b.weight", {1}, {0.0f});
    EXPECT_ANY_THROW(load_parameters(missing, ck));
    // prefix restricts the copy
    ParameterSet<float> partial;
    partial.add("a.bias", {3}, std::vector<float>(3, 0.0f));
    partial.add("b.weight", {1}, {9.0f});
    load_parameters(partial, ck, "a.");
    EXPECT_FLOAT_EQ(partial.at("a.bias").value.data()[2], 0.3f);
    EXPECT_FLOAT_EQ(partial.at("b.weight").value.data()[0], 9.0f);
}

TEST(Checkpoint, FileRoundTrip) {
    const auto path = std::filesystem::temp_directory_path() / "lmae_test_ckpt.bin";
    Checkpoint ck;
    store_parameters(ck, sample_params(), false);
    ck.save(path);
    const auto back = Checkpoint::load(path);
    EXPECT_EQ(back.entries().size(), ck.entries().size());
    std::filesystem::remove(path);
    EXPECT_ANY_THROW((void)Checkpoint::load(path));
}
