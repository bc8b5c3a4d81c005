#pragma once

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <string>

#include "beamtrack/config.hpp"
#include "beamtrack/gradcheck.hpp"
#include "beamtrack/metrics.hpp"

namespace beamtrack {

// exit codes: 0 ok, 1 check failure, 2 invalid config, 3 I/O failure,
// 4 corrupt input file, 5 checkpoint/dataset mismatch
enum ExitCode : int {
    kOk = 0,
    kCheckFailed = 1,
    kBadConfig = 2,
    kIoFailure = 3,
    kBadFormat = 4,
    kMismatch = 5,
};

namespace detail {

inline int guarded(const std::function<int()>& fn) {
    try {
        return fn();
    } catch (const config_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kBadConfig;
    } catch (const format_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kBadFormat;
    } catch (const mismatch_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kMismatch;
    } catch (const io_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kIoFailure;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kCheckFailed;
    }
}

inline std::vector<std::pair<std::string, std::string>> config_sidecar_entries(const RunConfig& cfg) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [k, v] : cfg.echo()) out.emplace_back("config." + k, v);
    return out;
}

inline void write_sidecar(const std::string& path, const RunConfig& cfg) {
    std::ofstream os(path + ".meta", std::ios::trunc);
    if (!os) throw io_error("cannot open " + path + ".meta for writing");
    for (const auto& [k, v] : config_sidecar_entries(cfg)) os << k << "=" << v << "\n";
    if (!os) throw io_error("write failed for " + path + ".meta");
}

}  // namespace detail

// training and evaluation run in 32-bit floats; gradient checks in 64-bit
using RunScalar = float;

inline int cmd_gen(const RunConfig& cfg, const std::string& out_path) {
    return detail::guarded([&] {
        cfg.validate();
        auto codebook = dft_codebook(cfg.ula, cfg.codebook_beams);
        Dataset ds = build_dataset(cfg.scene, cfg.ula, codebook, cfg.history, cfg.horizon, cfg.split_ratio,
                                   cfg.seed, cfg.multipath, cfg.threads);
        write_btds(ds, out_path, detail::config_sidecar_entries(cfg));

        std::map<uint32_t, uint32_t> hist;
        for (uint32_t l : ds.labels) hist[l]++;
        std::printf("wrote %s: T=%u frames %ux%u, valid samples=%u (train %zu / val %zu)\n", out_path.c_str(),
                    ds.frames_total, ds.d_w, ds.d_h, ds.valid_samples(), ds.train_ts.size(), ds.val_ts.size());
        std::printf("label histogram:");
        for (const auto& [label, count] : hist) std::printf(" %u:%u", label, count);
        std::printf("\n");
        return kOk;
    });
}

inline int cmd_train(const RunConfig& cfg, const std::string& data_path, const std::string& out_model,
                     const std::string& report_path) {
    return detail::guarded([&] {
        cfg.validate();
        Dataset ds = read_btds(data_path);
        ds.assign_split(cfg.split_ratio);
        ModelConfig mc = cfg.model_for_data(ds.history, ds.horizon, ds.codebook_size, ds.d_h, ds.d_w);

        Model<RunScalar> model(mc);
        model.init_params(cfg.seed);
        std::printf("training on %s: %zu train / %zu val samples, %zu parameters, %d epochs\n", data_path.c_str(),
                    ds.train_ts.size(), ds.val_ts.size(), model.count_params(), cfg.train.epochs);

        TrainReport report = fit(model, ds, cfg.train, cfg.threads);
        write_btmd(model, out_model);
        detail::write_sidecar(out_model, cfg);
        write_train_report_csv(report, report_path);
        detail::write_sidecar(report_path, cfg);

        if (report.best_epoch >= 0)
            std::printf("best epoch %d with validation loss %.6f\n", report.best_epoch, report.best_val_loss);
        else
            std::printf("no epochs run; wrote initial parameters\n");
        std::printf("wrote %s and %s\n", out_model.c_str(), report_path.c_str());
        return kOk;
    });
}

inline int cmd_eval(const RunConfig& cfg, const std::string& model_path, const std::string& data_path,
                    const std::string& report_path, bool probe_oracle = false) {
    return detail::guarded([&] {
        cfg.validate();
        Model<RunScalar> model = read_btmd<RunScalar>(model_path);
        Dataset ds = read_btds(data_path);
        ds.assign_split(cfg.split_ratio);

        const ModelConfig& mc = model.config();
        if (mc.codebook_size != static_cast<int>(ds.codebook_size) ||
            mc.history != static_cast<int>(ds.history) || mc.horizon != static_cast<int>(ds.horizon) ||
            mc.d_h != static_cast<int>(ds.d_h) || mc.d_w != static_cast<int>(ds.d_w) ||
            mc.frame_channels != static_cast<int>(ds.channels))
            throw mismatch_error("checkpoint " + model_path + " does not match dataset " + data_path +
                                 " (C, L, J or frame dims differ)");

        EvalConfig ec;
        ec.gamma = cfg.train.gamma;
        ec.dba_delta = cfg.dba_delta;
        ec.dba_k = cfg.dba_k;
        ec.preprocess_threshold = cfg.train.preprocess_threshold;
        ec.probe = probe_oracle ? EvalProbe::Oracle : EvalProbe::None;
        ec.threads = cfg.threads;

        MetricsReport report = evaluate(model, ds, ec);
        write_metrics_csv(report, report_path);
        write_plot_data(report, report_path + ".plot");
        detail::write_sidecar(report_path, cfg);

        for (size_t j = 0; j < report.per_slot.size(); ++j) {
            const auto& m = report.per_slot[j];
            std::printf("slot +%zu: top1=%.4f top3=%.4f top5=%.4f dba=%.4f loss=%.4f\n", j, m.top1, m.top3,
                        m.top5, m.dba, m.loss);
        }
        std::printf("avg:     top1=%.4f top3=%.4f top5=%.4f dba=%.4f loss=%.4f\n", report.avg.top1,
                    report.avg.top3, report.avg.top5, report.avg.dba, report.avg.loss);
        std::printf("wrote %s and %s.plot\n", report_path.c_str(), report_path.c_str());
        return kOk;
    });
}

inline int cmd_gradcheck(const RunConfig& cfg) {
    return detail::guarded([&] {
        GradCheckOptions opt;
        opt.seed = cfg.seed;
        GradCheckResult result = run_gradcheck(opt);

        std::map<std::string, double> group_max;
        for (const auto& e : result.entries) {
            std::string group = e.param.substr(0, e.param.find('.'));
            group_max[group] = std::max(group_max[group], e.rel_err);
        }
        std::printf("gradcheck: %zu sampled parameters, max relative error %.3g\n", result.entries.size(),
                    result.max_rel_err);
        for (const auto& [group, err] : group_max) std::printf("  %-6s max rel err %.3g\n", group.c_str(), err);
        if (!result.passed) {
            std::printf("FAILED parameters:");
            for (const auto& name : result.failed_params) std::printf(" %s", name.c_str());
            std::printf("\n");
            return kCheckFailed;
        }
        std::printf("PASS\n");
        return kOk;
    });
}

}  // namespace beamtrack
