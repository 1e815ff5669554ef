#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "mmtrain/data.hpp"
#include "test_support.hpp"

using namespace mmtrain;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = MMTRAIN_FIXTURE_DIR;

fs::path temp_file(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "mmtrain_test_data";
    fs::create_directories(dir);
    return dir / name;
}

fs::path write_lines(const std::string& name, const std::string& body) {
    const fs::path p = temp_file(name);
    std::ofstream(p) << body;
    return p;
}

enum class Block { Text, Audio, Visual };

// Per-sample mean over time of one modality, one row per sample.
Eigen::MatrixXd pooled(const Dataset& ds, Block which) {
    const std::size_t d = which == Block::Text ? ds.d_t : which == Block::Audio ? ds.d_a : ds.d_v;
    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ds.size()), static_cast<Eigen::Index>(d + 1));
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const Sample& s = ds.samples[i];
        const auto& x = which == Block::Text ? s.text : which == Block::Audio ? s.audio : s.visual;
        for (std::size_t l = 0; l < ds.seq_len; ++l) {
            for (std::size_t c = 0; c < d; ++c) X(i, c) += x[l * d + c] / static_cast<double>(ds.seq_len);
        }
        X(i, d) = 1.0;  // intercept
    }
    return X;
}

Eigen::VectorXd labels(const Dataset& ds) {
    Eigen::VectorXd y(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) y(i) = ds.samples[i].label;
    return y;
}

// Held-out MAE of an ordinary least-squares probe fit on the first 80%.
double probe_mae(const Dataset& ds, Block which) {
    const Eigen::MatrixXd X = pooled(ds, which);
    const Eigen::VectorXd y = labels(ds);
    const Eigen::Index n_fit = X.rows() * 4 / 5;
    const Eigen::VectorXd w = X.topRows(n_fit).colPivHouseholderQr().solve(y.head(n_fit));
    const Eigen::Index n_hold = X.rows() - n_fit;
    return (X.bottomRows(n_hold) * w - y.tail(n_hold)).cwiseAbs().mean();
}

}  // namespace

TEST(Synthetic, SameConfigSameBytes) {
    SyntheticConfig cfg;
    cfg.n_samples = 50;
    const Dataset a = gen_synthetic(cfg);
    const Dataset b = gen_synthetic(cfg);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a.samples[i].label, b.samples[i].label);
        EXPECT_EQ(a.samples[i].text, b.samples[i].text);
        EXPECT_EQ(a.samples[i].audio, b.samples[i].audio);
        EXPECT_EQ(a.samples[i].visual, b.samples[i].visual);
    }
    cfg.seed = 1;
    EXPECT_NE(gen_synthetic(cfg).samples[0].text, a.samples[0].text);
}

TEST(Synthetic, ShapesAndLabelRange) {
    SyntheticConfig cfg;
    cfg.n_samples = 200;
    const Dataset ds = gen_synthetic(cfg);
    EXPECT_EQ(ds.seq_len, cfg.seq_len);
    for (const auto& s : ds.samples) {
        EXPECT_EQ(s.text.size(), cfg.seq_len * cfg.d_t);
        EXPECT_EQ(s.audio.size(), cfg.seq_len * cfg.d_a);
        EXPECT_EQ(s.visual.size(), cfg.seq_len * cfg.d_v);
        EXPECT_GE(s.label, -3.0);
        EXPECT_LE(s.label, 3.0);
    }
}

TEST(Synthetic, UninformativeAudioProbeSitsAtLabelMeanBaseline) {
    SyntheticConfig cfg;
    cfg.n_samples = 5000;
    cfg.w_a = 0.0;
    const double mae = probe_mae(gen_synthetic(cfg), Block::Audio);
    // E|u| for u ~ U[-3, 3] is 1.5
    EXPECT_NEAR(mae, 1.5, 0.1);
}

TEST(Synthetic, StrongNoiselessTextIsLinearlyRecoverable) {
    SyntheticConfig cfg;
    cfg.n_samples = 3000;
    cfg.noise_std = 0.0;
    cfg.w_t = 5.0;
    EXPECT_LT(probe_mae(gen_synthetic(cfg), Block::Text), 0.1);
}

TEST(Synthetic, ProbeErrorFollowsInformativenessOrder) {
    SyntheticConfig cfg;
    cfg.n_samples = 4000;
    const Dataset ds = gen_synthetic(cfg);
    const double t = probe_mae(ds, Block::Text);
    const double a = probe_mae(ds, Block::Audio);
    const double v = probe_mae(ds, Block::Visual);
    EXPECT_LT(t, a);
    EXPECT_LT(a, v);
}

TEST(Synthetic, LabelMarginalIsNearUniform) {
    SyntheticConfig cfg;
    cfg.n_samples = 12000;
    cfg.d_t = cfg.d_a = cfg.d_v = 1;
    cfg.seq_len = 1;
    const Dataset ds = gen_synthetic(cfg);
    std::array<int, 6> bins{};
    double mean = 0.0;
    for (const auto& s : ds.samples) {
        mean += s.label;
        bins[std::min<std::size_t>(5, static_cast<std::size_t>(s.label + 3.0))]++;
    }
    mean /= static_cast<double>(ds.size());
    // sd of the mean is about 1.73 / sqrt(12000) = 0.016
    EXPECT_NEAR(mean, 0.0, 0.06);
    for (int b : bins) EXPECT_NEAR(b / static_cast<double>(ds.size()), 1.0 / 6.0, 0.02);
}

TEST(Synthetic, InvalidConfigRejected) {
    SyntheticConfig cfg;
    cfg.n_samples = 0;
    EXPECT_THROW(gen_synthetic(cfg), std::invalid_argument);
    cfg = {};
    cfg.w_t = cfg.w_a = cfg.w_v = 0.0;
    EXPECT_THROW(gen_synthetic(cfg), std::invalid_argument);
}

TEST(Split, EightyTenTenInOrder) {
    SyntheticConfig cfg;
    cfg.n_samples = 100;
    const Dataset ds = gen_synthetic(cfg);
    const DataSplits s = split_dataset(ds);
    EXPECT_EQ(s.train.size(), 80u);
    EXPECT_EQ(s.val.size(), 10u);
    EXPECT_EQ(s.test.size(), 10u);
    EXPECT_EQ(s.val.samples.front().id, ds.samples[80].id);
    EXPECT_EQ(s.test.split, Split::Test);
}

TEST(FeatureIo, RoundTripIsExact) {
    SyntheticConfig cfg;
    cfg.n_samples = 20;
    const Dataset ds = gen_synthetic(cfg);
    const fs::path p = temp_file("roundtrip.jsonl");
    save_features(ds, p);
    const Dataset back = load_features(p);
    ASSERT_EQ(back.size(), ds.size());
    EXPECT_EQ(back.seq_len, ds.seq_len);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        EXPECT_EQ(back.samples[i].id, ds.samples[i].id);
        EXPECT_EQ(back.samples[i].label, ds.samples[i].label);
        EXPECT_EQ(back.samples[i].text, ds.samples[i].text);
        EXPECT_EQ(back.samples[i].audio, ds.samples[i].audio);
        EXPECT_EQ(back.samples[i].visual, ds.samples[i].visual);
        EXPECT_EQ(back.samples[i].mask, ds.samples[i].mask);
    }
}

TEST(FeatureIo, SmallFixtureLoadsAndPadsShortRecord) {
    const Dataset ds = load_features(kFixtures / "small.jsonl");
    ASSERT_EQ(ds.size(), 6u);
    EXPECT_EQ(ds.seq_len, 4u);
    EXPECT_EQ(ds.d_t, 3u);
    EXPECT_EQ(ds.d_a, 2u);
    EXPECT_EQ(ds.d_v, 2u);
    EXPECT_EQ(ds.samples[0].id, "f0");
    EXPECT_EQ(ds.samples[0].label, -2.4);
    EXPECT_EQ(ds.samples[0].text[0], -0.3523);
    const Sample& shorty = ds.samples[5];
    EXPECT_EQ(shorty.mask, (std::vector<double>{1, 1, 1, 0}));
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(shorty.text[3 * 3 + c], 0.0);
}

TEST(FeatureIo, LongRecordsTruncateToFirstFiftySteps) {
    const Dataset ds = load_features(kFixtures / "long_l60.jsonl", 50);
    ASSERT_EQ(ds.size(), 2u);
    EXPECT_EQ(ds.seq_len, 50u);
    // The fixture encodes value = k * (1000 s + l + c / 100).
    for (std::size_t s = 0; s < 2; ++s) {
        const Sample& x = ds.samples[s];
        ASSERT_EQ(x.text.size(), 50u * 3u);
        ASSERT_EQ(x.audio.size(), 50u * 2u);
        for (std::size_t l = 0; l < 50; ++l) {
            for (std::size_t c = 0; c < 3; ++c) {
                EXPECT_DOUBLE_EQ(x.text[l * 3 + c], 1000.0 * s + l + c / 100.0);
            }
            for (std::size_t c = 0; c < 2; ++c) {
                EXPECT_DOUBLE_EQ(x.audio[l * 2 + c], -(1000.0 * s + l + c / 100.0));
                EXPECT_DOUBLE_EQ(x.visual[l * 2 + c], 2.0 * (1000.0 * s + l + c / 100.0));
            }
        }
        EXPECT_EQ(x.mask, std::vector<double>(50, 1.0));
    }
}

TEST(FeatureIo, MissingModalityNamesTheField) {
    const fs::path p = write_lines("missing.jsonl",
                                   "{\"id\":\"a\",\"label\":1,\"text\":[[1]],\"audio\":[[1]],\"visual\":[[1]]}\n"
                                   "{\"id\":\"b\",\"label\":1,\"text\":[[1]],\"visual\":[[1]]}\n");
    try {
        load_features(p);
        FAIL() << "expected SchemaError";
    } catch (const SchemaError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("audio"), std::string::npos) << msg;
        EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
    }
}

TEST(FeatureIo, MalformedRecordsAreSchemaErrors) {
    EXPECT_THROW(load_features(write_lines("bad_json.jsonl", "{not json}\n")), SchemaError);
    EXPECT_THROW(load_features(write_lines("no_label.jsonl", "{\"text\":[[1]],\"audio\":[[1]],\"visual\":[[1]]}\n")),
                 SchemaError);
    EXPECT_THROW(load_features(write_lines("unaligned.jsonl",
                                           "{\"label\":0,\"text\":[[1],[2]],\"audio\":[[1]],\"visual\":[[1]]}\n")),
                 SchemaError);
    EXPECT_THROW(load_features(write_lines("ragged.jsonl",
                                           "{\"label\":0,\"text\":[[1,2],[3]],\"audio\":[[1],[1]],\"visual\":[[1],[1]]}\n")),
                 SchemaError);
    EXPECT_THROW(load_features(write_lines("dims.jsonl",
                                           "{\"label\":0,\"text\":[[1]],\"audio\":[[1]],\"visual\":[[1]]}\n"
                                           "{\"label\":0,\"text\":[[1,2]],\"audio\":[[1]],\"visual\":[[1]]}\n")),
                 SchemaError);
    EXPECT_THROW(load_features(kFixtures / "does_not_exist.jsonl"), SchemaError);
}

TEST(MinMax, HandExample) {
    const Tensor x({1, 3, 1}, {2.0, 4.0, 6.0});
    const Tensor y = minmax_normalize(x);
    EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{0.0, 0.5, 1.0}));
}

TEST(MinMax, ConstantChannelMapsToZero) {
    const Tensor x({2, 2, 2}, {5.0, 1.0, 5.0, 2.0, 5.0, 3.0, 5.0, 4.0});
    const Tensor y = minmax_normalize(x);
    for (std::size_t r = 0; r < 4; ++r) EXPECT_EQ(y[r * 2], 0.0);
}

TEST(MinMax, RangeAndIdempotence) {
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        const Tensor x = mmtrain::testing::random_tensor({3, 4, 5}, rng, -10.0, 10.0);
        const Tensor y = minmax_normalize(x);
        for (double v : y.data()) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
        const Tensor z = minmax_normalize(y);
        EXPECT_LT(mmtrain::testing::max_abs_diff(y.data(), z.data()), 1e-12);
    }
}

TEST(MinMax, RejectsWrongRank) {
    EXPECT_THROW(minmax_normalize(Tensor::ones({2, 2})), ShapeError);
}

TEST(NormalizeBatch, TextPassesThrough) {
    Rng rng(4);
    const auto b = mmtrain::testing::random_batch(mmtrain::testing::tiny_model_config(), 3, rng);
    const auto n = normalize_batch(b);
    EXPECT_TRUE(n.text.same_node(b.text));
    EXPECT_FALSE(n.audio.same_node(b.audio));
}

TEST(Batches, LastPartialBatchKept) {
    SyntheticConfig cfg;
    cfg.n_samples = 10;
    const Dataset ds = gen_synthetic(cfg);
    const auto bs = batches(ds, 4, 0);
    ASSERT_EQ(bs.size(), 3u);
    EXPECT_EQ(bs[0].size(), 4u);
    EXPECT_EQ(bs[1].size(), 4u);
    EXPECT_EQ(bs[2].size(), 2u);
    std::set<std::size_t> seen;
    for (const auto& b : bs) seen.insert(b.indices.begin(), b.indices.end());
    EXPECT_EQ(seen.size(), 10u);
}

TEST(Batches, ShuffleDependsOnlyOnSeed) {
    SyntheticConfig cfg;
    cfg.n_samples = 30;
    const Dataset ds = gen_synthetic(cfg);
    auto order = [&](std::uint64_t seed, bool shuffle) {
        std::vector<std::size_t> out;
        for (const auto& b : batches(ds, 7, seed, shuffle)) out.insert(out.end(), b.indices.begin(), b.indices.end());
        return out;
    };
    EXPECT_EQ(order(5, true), order(5, true));
    EXPECT_NE(order(5, true), order(6, true));
    std::vector<std::size_t> identity(30);
    std::iota(identity.begin(), identity.end(), std::size_t{0});
    EXPECT_EQ(order(5, false), identity);
}

TEST(Batches, NonPositiveSizeIsContractError) {
    SyntheticConfig cfg;
    cfg.n_samples = 4;
    const Dataset ds = gen_synthetic(cfg);
    EXPECT_THROW(batches(ds, 0, 0), ContractError);
    EXPECT_THROW(batches(ds, -3, 0), ContractError);
}
