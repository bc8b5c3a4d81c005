#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "beamtrack/scene.hpp"

using namespace beamtrack;

namespace {

SceneConfig tiny_scene() {
    SceneConfig s;
    s.d_h = 32;
    s.d_w = 32;
    s.frames_total = 40;
    s.ue_size = 6;
    return s;
}

int brightest_column(const Image& img) {
    int best = 0;
    double best_sum = -1;
    for (int x = 0; x < img.width; ++x) {
        double sum = 0;
        for (int c = 0; c < img.channels; ++c)
            for (int y = 0; y < img.height; ++y) sum += img.at(c, y, x);
        if (sum > best_sum) {
            best_sum = sum;
            best = x;
        }
    }
    return best;
}

}  // namespace

TEST(Trajectory, ZeroVelocityIsStatic) {
    SceneConfig s = tiny_scene();
    s.speed_min_px = 0;
    s.speed_max_px = 0;
    auto traj = simulate_trajectory(s, 9);
    for (double th : traj.theta) EXPECT_DOUBLE_EQ(th, traj.theta[0]);
}

TEST(Trajectory, SameSeedIsIdentical) {
    SceneConfig s = tiny_scene();
    auto a = simulate_trajectory(s, 1234);
    auto b = simulate_trajectory(s, 1234);
    EXPECT_EQ(std::memcmp(a.theta.data(), b.theta.data(), a.theta.size() * sizeof(double)), 0);
    EXPECT_EQ(std::memcmp(a.range.data(), b.range.data(), a.range.size() * sizeof(double)), 0);
}

TEST(Trajectory, BoundedVelocityAndFieldOfView) {
    SceneConfig s;
    s.frames_total = 2000;
    auto traj = simulate_trajectory(s, 7);
    double v_max = s.speed_max_px * s.field_of_view / s.d_w;
    for (size_t t = 0; t < traj.theta.size(); ++t) {
        EXPECT_LT(std::abs(traj.theta[t]), s.field_of_view / 2.0);
        if (t > 0) {
            EXPECT_LE(std::abs(traj.theta[t] - traj.theta[t - 1]), v_max + 1e-12);
        }
        EXPECT_GE(traj.range[t], s.r_min);
        EXPECT_LE(traj.range[t], s.r_max);
    }
}

TEST(Trajectory, DwellBiasSkewsLabelHistogram) {
    SceneConfig s;
    s.frames_total = 4000;
    s.dwell_bias = 0.7;
    auto traj = simulate_trajectory(s, 42);

    ULAConfig ula{32, 0.5};
    auto cb = dft_codebook(ula, 32);
    std::vector<ComplexVec> h_seq;
    for (int t = 0; t < s.frames_total; ++t)
        h_seq.push_back(position_to_channel(traj.theta[static_cast<size_t>(t)],
                                            traj.range[static_cast<size_t>(t)], ula));
    auto labels = oracle_beams(h_seq, cb);

    std::map<int, int> hist;
    for (int l : labels) hist[l]++;
    int max_bin = 0, min_bin = s.frames_total;
    for (const auto& [label, count] : hist) {
        max_bin = std::max(max_bin, count);
        min_bin = std::min(min_bin, count);
    }
    EXPECT_GT(hist.size(), 4u);  // several distinct beams visited
    EXPECT_GT(static_cast<double>(max_bin) / min_bin, 2.0);
}

TEST(RenderFrame, CenteredAtZeroTheta) {
    SceneConfig s = tiny_scene();
    auto img = render_frame(0.0, 1.0, s, 0);
    EXPECT_NEAR(brightest_column(img), s.d_w / 2, s.ue_size / 2 + 1);
}

TEST(RenderFrame, DeterministicGivenState) {
    SceneConfig s = tiny_scene();
    auto a = render_frame(0.2, 1.5, s, 5);
    auto b = render_frame(0.2, 1.5, s, 5);
    EXPECT_EQ(a.v, b.v);
    s.noise_std = 0.05;
    auto c = render_frame(0.2, 1.5, s, 5);
    auto d = render_frame(0.2, 1.5, s, 5);
    EXPECT_EQ(c.v, d.v);
    auto e = render_frame(0.2, 1.5, s, 6);
    EXPECT_NE(e.v, c.v);
}

TEST(RenderFrame, BrightestColumnTracksProjection) {
    SceneConfig s;
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
        double theta = rng.uniform(-0.45, 0.45);
        auto img = render_frame(theta, 1.0, s, 0);
        int u = static_cast<int>(std::llround((theta / s.field_of_view + 0.5) * s.d_w));
        EXPECT_NEAR(brightest_column(img), u, s.ue_size / 2.0 + 1);
    }
}

TEST(RenderFrame, MonotoneColumnInTheta) {
    SceneConfig s;
    int prev = -1;
    for (double theta = -0.45; theta < 0.45; theta += 0.05) {
        int col = brightest_column(render_frame(theta, 1.0, s, 0));
        EXPECT_GT(col, prev);
        prev = col;
    }
}

TEST(RenderFrame, DomainErrors) {
    SceneConfig s = tiny_scene();
    EXPECT_THROW(render_frame(s.field_of_view, 1.0, s, 0), std::domain_error);
    EXPECT_THROW(render_frame(0.0, 0.0, s, 0), std::domain_error);
}

TEST(RenderFrame, ValuesInUnitRangeWithNoiseAndTexture) {
    SceneConfig s = tiny_scene();
    s.noise_std = 0.2;
    s.background_mode = BackgroundMode::Textured;
    s.distractor_count = 3;
    auto img = render_frame(0.1, 1.2, s, 77);
    for (float v : img.v) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(PositionToChannel, UnitRangeIsSteeringVector) {
    ULAConfig ula{16, 0.5};
    auto h = position_to_channel(0.3, 1.0, ula);
    auto a = steering_vector(0.3, ula);
    for (size_t i = 0; i < h.size(); ++i) {
        EXPECT_DOUBLE_EQ(h.re[i], a.re[i]);
        EXPECT_DOUBLE_EQ(h.im[i], a.im[i]);
    }
}

TEST(PositionToChannel, PathlossLaw) {
    ULAConfig ula{16, 0.5};
    auto near = position_to_channel(0.2, 1.0, ula);
    auto far = position_to_channel(0.2, 2.0, ula);
    EXPECT_NEAR(cnorm(far), 0.5 * cnorm(near), 1e-12);
    EXPECT_THROW(position_to_channel(0.2, 0.0, ula), std::domain_error);
}

TEST(PositionToChannel, CodebookAngleGetsItsLabel) {
    ULAConfig ula{16, 0.5};
    auto cb = dft_codebook(ula, 16);
    for (int c = 1; c <= 16; ++c) {
        double s = -1.0 + (2.0 * c - 1.0) / 16.0;
        std::vector<ComplexVec> h{position_to_channel(std::asin(s), 1.0, ula)};
        EXPECT_EQ(oracle_beams(h, cb)[0], c);
    }
}

TEST(PositionToChannel, NlosIsDeterministic) {
    ULAConfig ula{8, 0.5};
    MultipathConfig mp{2, 0.2};
    auto a = position_to_channel(0.1, 1.3, ula, mp);
    auto b = position_to_channel(0.1, 1.3, ula, mp);
    EXPECT_EQ(a.re, b.re);
    EXPECT_EQ(a.im, b.im);
    auto c = position_to_channel(0.1, 1.3, ula);  // no NLoS differs
    EXPECT_NE(a.re, c.re);
}

TEST(BuildDataset, WindowArithmetic) {
    SceneConfig s = tiny_scene();
    ULAConfig ula{8, 0.5};
    auto cb = dft_codebook(ula, 8);

    s.frames_total = 4 + 2 + 1;  // exactly one valid sample
    auto ds = build_dataset(s, ula, cb, 4, 2, 0.5, 1);
    EXPECT_EQ(ds.valid_samples(), 1u);
    EXPECT_EQ(ds.train_ts.size() + ds.val_ts.size(), 1u);

    s.frames_total = 30;
    auto ds2 = build_dataset(s, ula, cb, 4, 2, 0.8, 1);
    EXPECT_EQ(ds2.valid_samples(), 30u - 4 - 2);

    s.frames_total = 6;
    EXPECT_THROW(build_dataset(s, ula, cb, 4, 2, 0.8, 1), config_error);
}

TEST(BuildDataset, SplitIsContiguousDisjointExhaustive) {
    SceneConfig s = tiny_scene();
    ULAConfig ula{8, 0.5};
    auto cb = dft_codebook(ula, 8);
    auto ds = build_dataset(s, ula, cb, 3, 2, 0.8, 5);
    ASSERT_FALSE(ds.train_ts.empty());
    ASSERT_FALSE(ds.val_ts.empty());
    EXPECT_EQ(ds.train_ts.size() + ds.val_ts.size(), ds.valid_samples());
    EXPECT_LT(ds.train_ts.back(), ds.val_ts.front());
    for (size_t i = 1; i < ds.train_ts.size(); ++i) EXPECT_EQ(ds.train_ts[i], ds.train_ts[i - 1] + 1);
    EXPECT_EQ(ds.train_ts.front(), 3u);
    EXPECT_EQ(ds.val_ts.back(), s.frames_total - 2u - 1u);
}

TEST(BuildDataset, LabelsMatchOracleRecomputedFromStoredGeometry) {
    SceneConfig s = tiny_scene();
    ULAConfig ula{16, 0.5};
    auto cb = dft_codebook(ula, 16);
    MultipathConfig mp{1, 0.1};
    auto ds = build_dataset(s, ula, cb, 2, 1, 0.8, 11, mp);
    for (uint32_t t = 0; t < ds.frames_total; ++t) {
        std::vector<ComplexVec> h{position_to_channel(ds.theta[t], ds.range[t], ula, mp)};
        EXPECT_EQ(static_cast<uint32_t>(oracle_beams(h, cb)[0]), ds.labels[t]);
    }
}

TEST(BuildDataset, RegenerationIsBitIdentical) {
    SceneConfig s = tiny_scene();
    s.noise_std = 0.03;
    ULAConfig ula{8, 0.5};
    auto cb = dft_codebook(ula, 8);
    auto a = build_dataset(s, ula, cb, 2, 1, 0.8, 99);
    auto b = build_dataset(s, ula, cb, 2, 1, 0.8, 99, MultipathConfig{}, 2);  // thread count must not matter
    EXPECT_EQ(a.frames, b.frames);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_EQ(a.theta, b.theta);
}

TEST(BtdsFile, RoundTripAndDeterminism) {
    SceneConfig s = tiny_scene();
    ULAConfig ula{8, 0.5};
    auto cb = dft_codebook(ula, 8);
    auto ds = build_dataset(s, ula, cb, 2, 1, 0.8, 13);

    std::string p1 = "test_roundtrip_1.btds", p2 = "test_roundtrip_2.btds";
    write_btds(ds, p1);
    write_btds(ds, p2);

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    EXPECT_EQ(b1, b2);

    auto rd = read_btds(p1);
    EXPECT_EQ(rd.frames_total, ds.frames_total);
    EXPECT_EQ(rd.history, ds.history);
    EXPECT_EQ(rd.horizon, ds.horizon);
    EXPECT_EQ(rd.codebook_size, ds.codebook_size);
    EXPECT_EQ(rd.d_h, ds.d_h);
    EXPECT_EQ(rd.d_w, ds.d_w);
    EXPECT_EQ(rd.frames, ds.frames);
    EXPECT_EQ(rd.labels, ds.labels);
    EXPECT_EQ(rd.theta, ds.theta);
    EXPECT_EQ(rd.range, ds.range);

    std::ifstream meta(p1 + ".meta");
    ASSERT_TRUE(meta.good());
    std::string line;
    std::getline(meta, line);
    EXPECT_EQ(line, "format=BTDS");

    std::remove(p1.c_str());
    std::remove(p2.c_str());
    std::remove((p1 + ".meta").c_str());
    std::remove((p2 + ".meta").c_str());
}

TEST(BtdsFile, RejectsCorruptMagic) {
    std::string path = "test_corrupt.btds";
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOPE garbage";
    }
    EXPECT_THROW(read_btds(path), format_error);
    EXPECT_THROW(read_btds("does_not_exist.btds"), io_error);
    std::remove(path.c_str());
}
