#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "beamtrack/metrics.hpp"

using namespace beamtrack;

namespace {

using ModelD = Model<double>;

// dataset with a label stream cycling 1..C; frames are unused by probe modes
Dataset cycling_dataset(int total, int history, int horizon, int beams) {
    Dataset ds;
    ds.frames_total = static_cast<uint32_t>(total);
    ds.history = static_cast<uint32_t>(history);
    ds.horizon = static_cast<uint32_t>(horizon);
    ds.codebook_size = static_cast<uint32_t>(beams);
    ds.d_h = 16;
    ds.d_w = 16;
    ds.frames.assign(static_cast<size_t>(total) * ds.frame_elems(), 0.0f);
    ds.labels.resize(static_cast<size_t>(total));
    for (int t = 0; t < total; ++t) ds.labels[static_cast<size_t>(t)] = static_cast<uint32_t>(t % beams + 1);
    ds.theta.assign(static_cast<size_t>(total), 0.0);
    ds.range.assign(static_cast<size_t>(total), 1.0);
    for (uint32_t t = ds.history; t + ds.horizon < ds.frames_total; ++t) ds.val_ts.push_back(t);
    return ds;
}

}  // namespace

TEST(TopKHit, BasicRules) {
    std::vector<double> probs = {0.5, 0.3, 0.2};
    EXPECT_EQ(top_k_hit(probs, 1, 1), 1);  // truth at argmax hits every k
    EXPECT_EQ(top_k_hit(probs, 1, 2), 1);
    EXPECT_EQ(top_k_hit(probs, 1, 3), 1);
    EXPECT_EQ(top_k_hit(probs, 2, 1), 0);  // derived enumeration
    EXPECT_EQ(top_k_hit(probs, 2, 2), 1);
    EXPECT_EQ(top_k_hit(probs, 3, 3), 1);  // k = C always hits
    EXPECT_THROW(top_k_hit(probs, 1, 0), std::invalid_argument);
    EXPECT_THROW(top_k_hit(probs, 1, 4), std::invalid_argument);
    EXPECT_THROW(top_k_hit(probs, 0, 1), std::invalid_argument);
}

TEST(TopKHit, UniformTieRulePrefersLowIndices) {
    std::vector<double> uniform(8, 0.125);
    for (int truth = 1; truth <= 8; ++truth)
        for (int k = 1; k <= 8; ++k) EXPECT_EQ(top_k_hit(uniform, truth, k), truth <= k ? 1 : 0);
}

TEST(TopKIndices, OrderingWithTies) {
    std::vector<double> probs = {0.2, 0.5, 0.2, 0.1};
    EXPECT_EQ(top_k_indices(probs, 3), (std::vector<int>{2, 1, 3}));
}

TEST(DbaScore, PointValues) {
    // truth inside top-3 -> distance 0 -> score 1
    std::vector<double> probs = {0.5, 0.3, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0};
    EXPECT_DOUBLE_EQ(dba_score(probs, 2, 3, 5.0), 1.0);
    // nearest top-3 index at distance >= delta -> 0
    EXPECT_DOUBLE_EQ(dba_score(probs, 8, 3, 5.0), 0.0);
    // delta 5, nearest distance 2 -> 0.6
    EXPECT_DOUBLE_EQ(dba_score(probs, 5, 3, 5.0), 0.6);
    EXPECT_THROW(dba_score(probs, 1, 3, 0.0), std::invalid_argument);
}

TEST(DbaScore, DominatesTopKHit) {
    Rng rng(3);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<double> z(16);
        for (auto& v : z) v = rng.uniform(-3.0, 3.0);
        double mx = z[0];
        for (double v : z) mx = std::max(mx, v);
        double sum = 0;
        std::vector<double> p(16);
        for (size_t i = 0; i < 16; ++i) {
            p[i] = std::exp(z[i] - mx);
            sum += p[i];
        }
        for (auto& v : p) v /= sum;
        int truth = 1 + static_cast<int>(rng.below(16));
        EXPECT_GE(dba_score(p, truth, 3, 5.0), static_cast<double>(top_k_hit(p, truth, 3)) * 1.0 - 1e-12);
    }
}

TEST(Metrics, InvariantToPositiveLogitRescaling) {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> z(10), p1(10), p2(10);
        for (auto& v : z) v = rng.uniform(-2.0, 2.0);
        auto softmax_of = [](const std::vector<double>& zz, double scale) {
            std::vector<double> out(zz.size());
            double mx = -1e300;
            for (double v : zz) mx = std::max(mx, v * scale);
            double sum = 0;
            for (size_t i = 0; i < zz.size(); ++i) {
                out[i] = std::exp(zz[i] * scale - mx);
                sum += out[i];
            }
            for (auto& v : out) v /= sum;
            return out;
        };
        p1 = softmax_of(z, 1.0);
        p2 = softmax_of(z, 3.5);
        int truth = 1 + static_cast<int>(rng.below(10));
        for (int k : {1, 3, 5}) EXPECT_EQ(top_k_hit(p1, truth, k), top_k_hit(p2, truth, k));
        EXPECT_DOUBLE_EQ(dba_score(p1, truth, 3, 5.0), dba_score(p2, truth, 3, 5.0));
    }
}

TEST(Evaluate, OracleProbeIsPerfect) {
    auto ds = cycling_dataset(40, 2, 2, 8);
    ModelD m([&] {
        ModelConfig c;
        c.history = 2;
        c.horizon = 2;
        c.codebook_size = 8;
        c.d_h = 16;
        c.d_w = 16;
        return c;
    }());
    EvalConfig cfg;
    cfg.probe = EvalProbe::Oracle;
    auto report = evaluate(m, ds, cfg);
    ASSERT_EQ(report.per_slot.size(), 3u);
    for (const auto& slot : report.per_slot) {
        EXPECT_DOUBLE_EQ(slot.top1, 1.0);
        EXPECT_DOUBLE_EQ(slot.top3, 1.0);
        EXPECT_DOUBLE_EQ(slot.top5, 1.0);
        EXPECT_DOUBLE_EQ(slot.dba, 1.0);
        EXPECT_DOUBLE_EQ(slot.loss, 0.0);
    }
    EXPECT_DOUBLE_EQ(report.avg.top1, 1.0);
    EXPECT_DOUBLE_EQ(report.avg.dba, 1.0);
}

TEST(Evaluate, UniformProbeGivesExactKOverC) {
    // 32 validation samples over C=8 cycling labels: every class appears
    // exactly 4 times per slot, so top-k must be exactly k/C
    auto ds = cycling_dataset(32 + 2 + 2, 2, 2, 8);
    ASSERT_EQ(ds.val_ts.size() % 8, 0u);
    ModelD m([&] {
        ModelConfig c;
        c.history = 2;
        c.horizon = 2;
        c.codebook_size = 8;
        c.d_h = 16;
        c.d_w = 16;
        return c;
    }());
    EvalConfig cfg;
    cfg.probe = EvalProbe::Uniform;
    auto report = evaluate(m, ds, cfg);
    for (const auto& slot : report.per_slot) {
        EXPECT_DOUBLE_EQ(slot.top1, 1.0 / 8.0);
        EXPECT_DOUBLE_EQ(slot.top3, 3.0 / 8.0);
        EXPECT_DOUBLE_EQ(slot.top5, 5.0 / 8.0);
    }
    EXPECT_DOUBLE_EQ(report.avg.top1, 1.0 / 8.0);
    EXPECT_DOUBLE_EQ(report.avg.top3, 3.0 / 8.0);
    EXPECT_DOUBLE_EQ(report.avg.top5, 5.0 / 8.0);

    // uniform probe loss per slot is the closed form (1 - 1/C)^gamma ln C
    double expected = std::pow(1.0 - 1.0 / 8.0, cfg.gamma) * std::log(8.0);
    for (const auto& slot : report.per_slot) EXPECT_NEAR(slot.loss, expected, 1e-12);
}

TEST(Evaluate, ModelPathMonotoneAndConsistentWithValidate) {
    SceneConfig s;
    s.d_h = 32;
    s.d_w = 32;
    s.frames_total = 30;
    s.ue_size = 6;
    ULAConfig ula{8, 0.5};
    auto cb = dft_codebook(ula, 8);
    auto ds = build_dataset(s, ula, cb, 2, 1, 0.6, 7);

    ModelConfig mc;
    mc.history = 2;
    mc.horizon = 1;
    mc.codebook_size = 8;
    mc.d_h = 32;
    mc.d_w = 32;
    ModelD m(mc);
    m.init_params(9);

    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 4;
    Adam<double> opt(m.params());
    train_epoch(m, ds, tc, 0, opt);

    EvalConfig cfg;
    auto report = evaluate(m, ds, cfg);
    ASSERT_EQ(report.per_slot.size(), 2u);
    for (const auto& slot : report.per_slot) {
        EXPECT_LE(slot.top1, slot.top3 + 1e-12);
        EXPECT_LE(slot.top3, slot.top5 + 1e-12);
        EXPECT_GE(slot.dba, slot.top3 - 1e-12);
        EXPECT_GE(slot.top1, 0.0);
        EXPECT_LE(slot.top5, 1.0);
    }
    EXPECT_LE(report.avg.top1, report.avg.top3 + 1e-12);
    EXPECT_LE(report.avg.top3, report.avg.top5 + 1e-12);
    EXPECT_GE(report.avg.dba, report.avg.top3 - 1e-12);

    // avg row equals the mean of the slot rows
    double top1_mean = 0;
    for (const auto& slot : report.per_slot) top1_mean += slot.top1;
    EXPECT_NEAR(report.avg.top1, top1_mean / 2.0, 1e-12);

    // the report's mean loss is the same quantity validate() computes
    EXPECT_NEAR(report.avg.loss, validate<double>(m, ds, cfg.gamma, cfg.preprocess_threshold), 1e-12);

    // deterministic and thread-count independent
    auto again = evaluate(m, ds, cfg);
    EXPECT_DOUBLE_EQ(report.avg.top1, again.avg.top1);
    EvalConfig threaded = cfg;
    threaded.threads = 2;
    auto par = evaluate(m, ds, threaded);
    EXPECT_DOUBLE_EQ(report.avg.loss, par.avg.loss);
    EXPECT_DOUBLE_EQ(report.avg.dba, par.avg.dba);
}

TEST(Evaluate, EmptySplitThrows) {
    auto ds = cycling_dataset(20, 2, 1, 4);
    ds.val_ts.clear();
    ModelD m([&] {
        ModelConfig c;
        c.history = 2;
        c.horizon = 1;
        c.codebook_size = 4;
        c.d_h = 16;
        c.d_w = 16;
        return c;
    }());
    EvalConfig cfg;
    EXPECT_THROW(evaluate(m, ds, cfg), std::invalid_argument);
}

TEST(MetricsFiles, CsvAndPlotShapes) {
    MetricsReport report;
    report.per_slot = {{0.9, 0.95, 1.0, 0.97, 0.2}, {0.8, 0.9, 0.95, 0.94, 0.3}};
    report.avg = {0.85, 0.925, 0.975, 0.955, 0.25};
    write_metrics_csv(report, "m.csv");
    write_plot_data(report, "m.plot");

    std::ifstream csv("m.csv");
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "slot,top1,top3,top5,dba,loss");
    int rows = 0;
    bool saw_avg = false;
    while (std::getline(csv, line))
        if (!line.empty()) {
            ++rows;
            if (line.rfind("avg,", 0) == 0) saw_avg = true;
        }
    EXPECT_EQ(rows, 3);  // two slots + avg
    EXPECT_TRUE(saw_avg);

    std::ifstream plot("m.plot");
    std::getline(plot, line);
    EXPECT_EQ(line[0], '#');
    rows = 0;
    while (std::getline(plot, line))
        if (!line.empty()) ++rows;
    EXPECT_EQ(rows, 2);

    std::remove("m.csv");
    std::remove("m.plot");
}
