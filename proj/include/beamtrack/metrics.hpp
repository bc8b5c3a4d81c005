#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "beamtrack/train.hpp"

namespace beamtrack {

// 1 iff truth is among the k highest-probability indices; on equal
// probabilities the lower index ranks first. truth is 1-based.
inline int top_k_hit(const std::vector<double>& probs, int truth, int k) {
    int c = static_cast<int>(probs.size());
    if (k < 1 || k > c) throw std::invalid_argument("top_k_hit: k out of range");
    if (truth < 1 || truth > c) throw std::invalid_argument("top_k_hit: truth out of range");
    int ti = truth - 1;
    int rank = 1;
    for (int j = 0; j < c; ++j) {
        if (probs[static_cast<size_t>(j)] > probs[static_cast<size_t>(ti)]) ++rank;
        else if (j < ti && probs[static_cast<size_t>(j)] == probs[static_cast<size_t>(ti)]) ++rank;
    }
    return rank <= k ? 1 : 0;
}

// indices (1-based) of the k top predictions under the same ordering
inline std::vector<int> top_k_indices(const std::vector<double>& probs, int k) {
    std::vector<int> idx(probs.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (probs[static_cast<size_t>(a)] != probs[static_cast<size_t>(b)])
            return probs[static_cast<size_t>(a)] > probs[static_cast<size_t>(b)];
        return a < b;
    });
    idx.resize(static_cast<size_t>(k));
    for (auto& i : idx) ++i;
    return idx;
}

// truncated linear decay of the closest top-k prediction's index distance:
// max(0, 1 - min_j |b_j - truth| / delta)
inline double dba_score(const std::vector<double>& probs, int truth, int k = 3, double delta = 5.0) {
    if (!(delta > 0)) throw std::invalid_argument("dba_score: delta must be > 0");
    int c = static_cast<int>(probs.size());
    if (k < 1 || k > c) throw std::invalid_argument("dba_score: k out of range");
    int dist = c;
    for (int b : top_k_indices(probs, k)) dist = std::min(dist, std::abs(b - truth));
    return std::max(0.0, 1.0 - static_cast<double>(dist) / delta);
}

struct SlotMetrics {
    double top1 = 0, top3 = 0, top5 = 0, dba = 0, loss = 0;
};

struct MetricsReport {
    std::vector<SlotMetrics> per_slot;  // slot offsets 0..J
    SlotMetrics avg;
    size_t samples = 0;
};

enum class EvalProbe { None, Oracle, Uniform };

struct EvalConfig {
    double gamma = 2.0;
    double dba_delta = 5.0;
    int dba_k = 3;
    double preprocess_threshold = 0.05;
    EvalProbe probe = EvalProbe::None;
    int threads = 1;
};

namespace detail {
inline double focal_value(double p_truth, double gamma) {
    if (p_truth >= 1.0) return 0.0;
    double p = std::max(p_truth, 1e-12);
    return -std::pow(1.0 - p, gamma) * std::log(p);
}
}  // namespace detail

// Runs inference over the validation split and aggregates per-slot means plus
// their slot averages. Probe modes bypass the model: Oracle injects one-hot
// rows at the ground truth, Uniform injects flat rows.
template <class S>
MetricsReport evaluate(Model<S>& model, const Dataset& ds, const EvalConfig& cfg) {
    if (ds.val_ts.empty()) throw std::invalid_argument("evaluate: empty validation split");
    const int slots = static_cast<int>(ds.horizon) + 1;
    const int c = static_cast<int>(ds.codebook_size);

    std::vector<std::vector<SlotMetrics>> per_sample(ds.val_ts.size());
    parallel_for(ds.val_ts.size(), cfg.threads, [&](size_t i) {
        uint32_t t = ds.val_ts[i];
        std::vector<int> labels = ds.window_labels(t);
        std::vector<std::vector<double>> prob_rows(static_cast<size_t>(slots));
        std::vector<double> losses(static_cast<size_t>(slots));

        if (cfg.probe == EvalProbe::Oracle) {
            for (int j = 0; j < slots; ++j) {
                prob_rows[static_cast<size_t>(j)].assign(static_cast<size_t>(c), 0.0);
                prob_rows[static_cast<size_t>(j)][static_cast<size_t>(labels[static_cast<size_t>(j)] - 1)] = 1.0;
                losses[static_cast<size_t>(j)] = detail::focal_value(1.0, cfg.gamma);
            }
        } else if (cfg.probe == EvalProbe::Uniform) {
            for (int j = 0; j < slots; ++j) {
                prob_rows[static_cast<size_t>(j)].assign(static_cast<size_t>(c), 1.0 / c);
                losses[static_cast<size_t>(j)] = detail::focal_value(1.0 / c, cfg.gamma);
            }
        } else {
            Tape<S> tape(false);
            auto x = sample_input<S>(ds, t, cfg.preprocess_threshold);
            auto block = model.forward(tape, x, BnMode::Eval);
            for (int j = 0; j < slots; ++j) {
                prob_rows[static_cast<size_t>(j)].resize(static_cast<size_t>(c));
                for (int b = 0; b < c; ++b)
                    prob_rows[static_cast<size_t>(j)][static_cast<size_t>(b)] =
                        static_cast<double>(block.probs.at(j, b));
                auto row = slice_rows(tape, block.logits, j, j + 1);
                auto l = focal_loss(tape, row, labels[static_cast<size_t>(j)], static_cast<S>(cfg.gamma));
                losses[static_cast<size_t>(j)] = static_cast<double>(l.v()[0]);
            }
        }

        auto& slots_out = per_sample[i];
        slots_out.resize(static_cast<size_t>(slots));
        for (int j = 0; j < slots; ++j) {
            const auto& p = prob_rows[static_cast<size_t>(j)];
            int truth = labels[static_cast<size_t>(j)];
            SlotMetrics& m = slots_out[static_cast<size_t>(j)];
            m.top1 = top_k_hit(p, truth, 1);
            m.top3 = top_k_hit(p, truth, std::min(3, c));
            m.top5 = top_k_hit(p, truth, std::min(5, c));
            m.dba = dba_score(p, truth, std::min(cfg.dba_k, c), cfg.dba_delta);
            m.loss = losses[static_cast<size_t>(j)];
        }
    });

    MetricsReport report;
    report.samples = ds.val_ts.size();
    report.per_slot.assign(static_cast<size_t>(slots), SlotMetrics{});
    for (const auto& sample : per_sample)
        for (int j = 0; j < slots; ++j) {
            report.per_slot[static_cast<size_t>(j)].top1 += sample[static_cast<size_t>(j)].top1;
            report.per_slot[static_cast<size_t>(j)].top3 += sample[static_cast<size_t>(j)].top3;
            report.per_slot[static_cast<size_t>(j)].top5 += sample[static_cast<size_t>(j)].top5;
            report.per_slot[static_cast<size_t>(j)].dba += sample[static_cast<size_t>(j)].dba;
            report.per_slot[static_cast<size_t>(j)].loss += sample[static_cast<size_t>(j)].loss;
        }
    double n = static_cast<double>(report.samples);
    for (auto& m : report.per_slot) {
        m.top1 /= n;
        m.top3 /= n;
        m.top5 /= n;
        m.dba /= n;
        m.loss /= n;
    }
    for (const auto& m : report.per_slot) {
        report.avg.top1 += m.top1;
        report.avg.top3 += m.top3;
        report.avg.top5 += m.top5;
        report.avg.dba += m.dba;
        report.avg.loss += m.loss;
    }
    report.avg.top1 /= slots;
    report.avg.top3 /= slots;
    report.avg.top5 /= slots;
    report.avg.dba /= slots;
    report.avg.loss /= slots;
    return report;
}

// rows = slot offsets 0..J plus an avg row
inline void write_metrics_csv(const MetricsReport& report, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw io_error("cannot open " + path + " for writing");
    os << "slot,top1,top3,top5,dba,loss\n";
    char buf[200];
    for (size_t j = 0; j < report.per_slot.size(); ++j) {
        const auto& m = report.per_slot[j];
        std::snprintf(buf, sizeof(buf), "%zu,%.12g,%.12g,%.12g,%.12g,%.12g\n", j, m.top1, m.top3, m.top5, m.dba, m.loss);
        os << buf;
    }
    const auto& a = report.avg;
    std::snprintf(buf, sizeof(buf), "avg,%.12g,%.12g,%.12g,%.12g,%.12g\n", a.top1, a.top3, a.top5, a.dba, a.loss);
    os << buf;
    if (!os) throw io_error("write failed for " + path);
}

// per-slot curve data, one metric per column (x = slot offset)
inline void write_plot_data(const MetricsReport& report, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw io_error("cannot open " + path + " for writing");
    os << "# slot top1 top3 top5 dba loss\n";
    char buf[200];
    for (size_t j = 0; j < report.per_slot.size(); ++j) {
        const auto& m = report.per_slot[j];
        std::snprintf(buf, sizeof(buf), "%zu %.12g %.12g %.12g %.12g %.12g\n", j, m.top1, m.top3, m.top5, m.dba, m.loss);
        os << buf;
    }
    if (!os) throw io_error("write failed for " + path);
}

}  // namespace beamtrack
