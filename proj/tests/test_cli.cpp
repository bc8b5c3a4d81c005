#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "beamtrack/cli.hpp"

using namespace beamtrack;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path dir;
    TempDir() {
        dir = fs::temp_directory_path() / ("beamtrack_cli_" + std::to_string(::getpid()));
        fs::create_directories(dir);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(dir, ec);
    }
    std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

RunConfig tiny_cfg() {
    RunConfig cfg;
    cfg.scene.frames_total = 30;
    cfg.scene.d_h = 32;
    cfg.scene.d_w = 32;
    cfg.history = 2;
    cfg.horizon = 1;
    cfg.codebook_beams = 8;
    cfg.ula.n_antennas = 8;
    cfg.train.epochs = 1;
    cfg.train.batch_size = 8;
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// parses a metrics/train CSV into rows of cells
std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::vector<std::vector<std::string>> rows;
    std::ifstream is(path);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

}  // namespace

TEST(RunConfigFile, ParsesAndRejects) {
    TempDir tmp;
    std::string path = tmp / "ok.cfg";
    {
        std::ofstream os(path);
        os << "# comment\n"
           << "seed = 7\n"
           << "scene.frames = 123\n"
           << "model.mha = off\n"
           << "train.lr_init = 2e-4\n";
    }
    RunConfig cfg;
    cfg.apply_file(path);
    EXPECT_EQ(cfg.seed, 7u);
    EXPECT_EQ(cfg.scene.frames_total, 123);
    EXPECT_FALSE(cfg.model.use_mha);
    EXPECT_DOUBLE_EQ(cfg.train.lr_init, 2e-4);

    std::string bad = tmp / "bad.cfg";
    {
        std::ofstream os(bad);
        os << "scene.framez = 10\n";
    }
    RunConfig cfg2;
    EXPECT_THROW(cfg2.apply_file(bad), config_error);

    std::string bad_value = tmp / "badval.cfg";
    {
        std::ofstream os(bad_value);
        os << "train.epochs = soon\n";
    }
    RunConfig cfg3;
    EXPECT_THROW(cfg3.apply_file(bad_value), config_error);

    RunConfig cfg4;
    EXPECT_THROW(cfg4.apply_file(tmp / "missing.cfg"), io_error);
}

TEST(RunConfigFile, PresetAppliesBeforeOverridesRegardlessOfOrder) {
    TempDir tmp;
    std::string path = tmp / "preset.cfg";
    {
        std::ofstream os(path);
        os << "model.gru_hidden = 64\n"
           << "model.preset = paper\n";  // listed after the override on purpose
    }
    RunConfig cfg;
    cfg.apply_file(path);
    EXPECT_EQ(cfg.model.gru_hidden, 64);                 // override survives
    EXPECT_EQ(cfg.model.cnn_channels[4], 256);           // preset applied underneath
}

TEST(CmdGen, ValidatesAndWritesSidecar) {
    TempDir tmp;
    RunConfig cfg = tiny_cfg();
    std::string out = tmp / "data.btds";
    EXPECT_EQ(cmd_gen(cfg, out), kOk);
    EXPECT_TRUE(fs::exists(out));
    EXPECT_TRUE(fs::exists(out + ".meta"));

    std::string meta = slurp(out + ".meta");
    EXPECT_NE(meta.find("format=BTDS"), std::string::npos);
    EXPECT_NE(meta.find("config.seed=42"), std::string::npos);
    EXPECT_NE(meta.find("config.train.lr_init=0.0001"), std::string::npos);

    // T < L + J + 1 is a config error, exit code 2
    RunConfig bad = tiny_cfg();
    bad.scene.frames_total = 3;
    EXPECT_EQ(cmd_gen(bad, tmp / "x.btds"), kBadConfig);

    // unwritable output is an I/O failure, exit code 3
    EXPECT_EQ(cmd_gen(cfg, "/nonexistent_dir/x.btds"), kIoFailure);
}

TEST(CmdGen, SameSeedIsByteIdentical) {
    TempDir tmp;
    RunConfig cfg = tiny_cfg();
    std::string a = tmp / "a.btds", b = tmp / "b.btds";
    ASSERT_EQ(cmd_gen(cfg, a), kOk);
    ASSERT_EQ(cmd_gen(cfg, b), kOk);
    EXPECT_EQ(slurp(a), slurp(b));
    EXPECT_EQ(slurp(a + ".meta"), slurp(b + ".meta"));

    RunConfig other = tiny_cfg();
    other.seed = 43;
    std::string c = tmp / "c.btds";
    ASSERT_EQ(cmd_gen(other, c), kOk);
    EXPECT_NE(slurp(a), slurp(c));
}

TEST(CmdTrain, SmokeAndErrorPaths) {
    TempDir tmp;
    RunConfig cfg = tiny_cfg();
    std::string data = tmp / "data.btds";
    ASSERT_EQ(cmd_gen(cfg, data), kOk);

    std::string model = tmp / "model.btmd", report = tmp / "train.csv";
    EXPECT_EQ(cmd_train(cfg, data, model, report), kOk);
    EXPECT_TRUE(fs::exists(model));
    EXPECT_TRUE(fs::exists(model + ".meta"));
    EXPECT_TRUE(fs::exists(report));

    auto rows = read_csv(report);
    ASSERT_EQ(rows.size(), 2u);  // header + one epoch
    EXPECT_EQ(rows[0][0], "epoch");

    // missing dataset -> 3, corrupt dataset -> 4
    EXPECT_EQ(cmd_train(cfg, tmp / "missing.btds", model, report), kIoFailure);
    std::string corrupt = tmp / "corrupt.btds";
    {
        std::ofstream os(corrupt, std::ios::binary);
        os << "JUNKJUNKJUNKJUNK";
    }
    EXPECT_EQ(cmd_train(cfg, corrupt, model, report), kBadFormat);
}

TEST(CmdTrain, ReportedBestLossIsCsvMinimumAndRerunsAreByteIdentical) {
    TempDir tmp;
    RunConfig cfg = tiny_cfg();
    cfg.train.epochs = 3;
    std::string data = tmp / "data.btds";
    ASSERT_EQ(cmd_gen(cfg, data), kOk);

    std::string m1 = tmp / "m1.btmd", r1 = tmp / "r1.csv";
    std::string m2 = tmp / "m2.btmd", r2 = tmp / "r2.csv";
    ASSERT_EQ(cmd_train(cfg, data, m1, r1), kOk);
    ASSERT_EQ(cmd_train(cfg, data, m2, r2), kOk);
    EXPECT_EQ(slurp(m1), slurp(m2));
    EXPECT_EQ(slurp(r1), slurp(r2));

    // the checkpoint reproduces the minimum validation loss of the CSV
    auto rows = read_csv(r1);
    double min_val = 1e300;
    for (size_t i = 1; i < rows.size(); ++i) min_val = std::min(min_val, std::stod(rows[i][2]));
    auto model = read_btmd<RunScalar>(m1);
    Dataset ds = read_btds(data);
    ds.assign_split(cfg.split_ratio);
    double val = validate<RunScalar>(model, ds, cfg.train.gamma, cfg.train.preprocess_threshold);
    EXPECT_NEAR(val, min_val, 1e-9);
}

TEST(CmdEval, ReportShapesProbeAndMismatch) {
    TempDir tmp;
    RunConfig cfg = tiny_cfg();
    std::string data = tmp / "data.btds";
    std::string model = tmp / "model.btmd";
    std::string train_report = tmp / "train.csv";
    ASSERT_EQ(cmd_gen(cfg, data), kOk);
    ASSERT_EQ(cmd_train(cfg, data, model, train_report), kOk);

    std::string report = tmp / "report.csv";
    ASSERT_EQ(cmd_eval(cfg, model, data, report), kOk);
    EXPECT_TRUE(fs::exists(report));
    EXPECT_TRUE(fs::exists(report + ".plot"));
    EXPECT_TRUE(fs::exists(report + ".meta"));

    auto rows = read_csv(report);
    ASSERT_EQ(rows.size(), 1u + 2u + 1u);  // header + J+1 slots + avg
    EXPECT_EQ(rows.back()[0], "avg");
    // avg row equals the mean of slot rows
    for (size_t col = 1; col <= 5; ++col) {
        double mean = (std::stod(rows[1][col]) + std::stod(rows[2][col])) / 2.0;
        EXPECT_NEAR(std::stod(rows.back()[col]), mean, 1e-9);
    }

    // oracle probe: all metrics exactly 1
    std::string probe_report = tmp / "probe.csv";
    ASSERT_EQ(cmd_eval(cfg, model, data, probe_report, true), kOk);
    auto probe_rows = read_csv(probe_report);
    for (size_t i = 1; i < probe_rows.size(); ++i)
        for (size_t col = 1; col <= 4; ++col) EXPECT_EQ(std::stod(probe_rows[i][col]), 1.0);

    // dataset with different geometry -> mismatch, exit code 5
    RunConfig other = tiny_cfg();
    other.codebook_beams = 16;
    other.ula.n_antennas = 16;
    std::string data2 = tmp / "data2.btds";
    ASSERT_EQ(cmd_gen(other, data2), kOk);
    EXPECT_EQ(cmd_eval(cfg, model, data2, tmp / "bad.csv"), kMismatch);

    // corrupt checkpoint -> 4
    std::string bad_model = tmp / "bad.btmd";
    {
        std::ofstream os(bad_model, std::ios::binary);
        os << "NOTACKPT";
    }
    EXPECT_EQ(cmd_eval(cfg, bad_model, data, tmp / "bad2.csv"), kBadFormat);
}

TEST(CmdGradcheck, PassesAndNegativeControlNamesParameter) {
    RunConfig cfg;
    cfg.seed = 42;
    EXPECT_EQ(cmd_gradcheck(cfg), kOk);

    GradCheckOptions opt;
    opt.seed = 42;
    opt.corrupt_param = "gru.u_z";
    auto result = run_gradcheck(opt);
    EXPECT_FALSE(result.passed);
    ASSERT_FALSE(result.failed_params.empty());
    EXPECT_EQ(result.failed_params[0], "gru.u_z");
}
