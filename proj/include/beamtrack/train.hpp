#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "beamtrack/common.hpp"
#include "beamtrack/loss.hpp"
#include "beamtrack/model.hpp"
#include "beamtrack/preprocess.hpp"
#include "beamtrack/scene.hpp"

namespace beamtrack {

struct TrainConfig {
    int epochs = 30;
    int batch_size = 32;
    double lr_init = 1e-4;
    double lr_min = 1e-6;
    int cycle_epochs = 10;
    uint64_t seed = 42;
    double gamma = 2.0;
    double preprocess_threshold = 0.05;

    void validate() const {
        if (epochs < 0) throw config_error("TrainConfig: epochs must be >= 0");
        if (batch_size < 1) throw config_error("TrainConfig: batch_size must be >= 1");
        if (!(lr_init > lr_min) || !(lr_min > 0))
            throw config_error("TrainConfig: need lr_init > lr_min > 0");
        if (cycle_epochs < 1) throw config_error("TrainConfig: cycle_epochs must be >= 1");
        if (gamma < 0) throw config_error("TrainConfig: gamma must be >= 0");
    }
};

// cyclic cosine annealing, restarting every cycle_epochs
inline double lr_schedule(int step_epoch, const TrainConfig& cfg) {
    if (step_epoch < 0) throw std::invalid_argument("lr_schedule: epoch must be >= 0");
    int m = step_epoch % cfg.cycle_epochs;
    return cfg.lr_min + 0.5 * (cfg.lr_init - cfg.lr_min) *
                            (1.0 + std::cos(M_PI * static_cast<double>(m) / cfg.cycle_epochs));
}

// Adam with bias correction. Gradients are read from the parameter tensors;
// a non-finite gradient aborts with the parameter name.
template <class S>
class Adam {
   public:
    explicit Adam(std::vector<NamedTensor<S>> params, S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8))
        : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& p : params_) {
            m_.emplace_back(p.t.numel(), S(0));
            v_.emplace_back(p.t.numel(), S(0));
        }
    }

    void step(double lr) {
        ++steps_;
        S c1 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta1_), steps_));
        S c2 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta2_), steps_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            if (!p.t.has_grad()) continue;
            auto& val = p.t.v();
            const auto& g = p.t.grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (size_t j = 0; j < val.size(); ++j) {
                if (!std::isfinite(g[j]))
                    throw std::runtime_error("optimizer_step: non-finite gradient in " + p.name);
                m[j] = beta1_ * m[j] + (S(1) - beta1_) * g[j];
                v[j] = beta2_ * v[j] + (S(1) - beta2_) * g[j] * g[j];
                S mhat = m[j] / c1;
                S vhat = v[j] / c2;
                val[j] -= static_cast<S>(lr) * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    int64_t steps() const { return steps_; }

   private:
    std::vector<NamedTensor<S>> params_;
    std::vector<std::vector<S>> m_, v_;
    S beta1_, beta2_, eps_;
    int64_t steps_ = 0;
};

struct TrainReport {
    struct Row {
        int epoch;
        double train_loss;
        double val_loss;
        double lr;
    };
    std::vector<Row> rows;
    int best_epoch = -1;
    double best_val_loss = std::numeric_limits<double>::infinity();
};

inline void write_train_report_csv(const TrainReport& report, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw io_error("cannot open " + path + " for writing");
    os << "epoch,train_loss,val_loss,lr\n";
    char buf[160];
    for (const auto& r : report.rows) {
        std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%.12g\n", r.epoch, r.train_loss, r.val_loss, r.lr);
        os << buf;
    }
    if (!os) throw io_error("write failed for " + path);
}

// preprocessed input tensor [(L+1)×c×h×w] for the sample at timestamp t
template <class S>
TensorT<S> sample_input(const Dataset& ds, uint32_t t, double threshold) {
    return pack_frames<S>(preprocess_sequence(ds.window_frames(t), threshold));
}

// preprocessed frames of several samples stacked sample-major into
// [n·(L+1)×c×h×w]
template <class S>
TensorT<S> batch_input(const Dataset& ds, const std::vector<uint32_t>& ts, double threshold) {
    if (ts.empty()) throw std::invalid_argument("batch_input: empty batch");
    const int steps = static_cast<int>(ds.history) + 1;
    TensorT<S> out({static_cast<int>(ts.size()) * steps, static_cast<int>(ds.channels), static_cast<int>(ds.d_h),
                    static_cast<int>(ds.d_w)});
    const size_t frame_elems = ds.frame_elems();
    for (size_t i = 0; i < ts.size(); ++i) {
        auto processed = preprocess_sequence(ds.window_frames(ts[i]), threshold);
        for (int t = 0; t < steps; ++t) {
            S* dst = out.v().data() + (i * steps + static_cast<size_t>(t)) * frame_elems;
            const auto& img = processed[static_cast<size_t>(t)].v;
            for (size_t j = 0; j < frame_elems; ++j) dst[j] = static_cast<S>(img[j]);
        }
    }
    return out;
}

// One pass over the shuffled training timestamps in ceil(N/B) batches. Each
// batch accumulates per-sample gradients scaled by 1/(B(J+1)), then takes one
// optimizer step at the epoch's learning rate. Returns the mean batch loss;
// per-batch losses are appended to batch_losses when given.
template <class S>
double train_epoch(Model<S>& model, const Dataset& ds, const TrainConfig& cfg, int epoch_index, Adam<S>& opt,
                   std::vector<double>* batch_losses = nullptr) {
    if (ds.train_ts.empty()) throw std::invalid_argument("train_epoch: empty training split");
    cfg.validate();
    std::vector<uint32_t> order = ds.train_ts;
    Rng rng(Rng::mix(cfg.seed, static_cast<uint64_t>(epoch_index)));
    rng.shuffle(order);

    const int slots = model.config().horizon + 1;
    const double lr = lr_schedule(epoch_index, cfg);
    double epoch_loss = 0.0;
    size_t n_batches = 0;

    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
        size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
        std::vector<uint32_t> batch_ts(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(end));
        size_t b = batch_ts.size();
        double scale = 1.0 / (static_cast<double>(b) * slots);

        model.zero_grad();
        Tape<S> tape;
        auto x = batch_input<S>(ds, batch_ts, cfg.preprocess_threshold);
        auto blocks = model.forward_batch(tape, x, static_cast<int>(b), BnMode::Train);
        TensorT<S> total;
        for (size_t i = 0; i < b; ++i) {
            auto l = task_loss(tape, blocks[i], ds.window_labels(batch_ts[i]), static_cast<S>(cfg.gamma));
            total = i == 0 ? l : add(tape, total, l);
        }
        tape.backward(total, static_cast<S>(scale));
        opt.step(lr);

        double batch_loss = static_cast<double>(total.v()[0]) * scale;
        if (batch_losses) batch_losses->push_back(batch_loss);
        epoch_loss += batch_loss;
        ++n_batches;
    }
    return epoch_loss / static_cast<double>(n_batches);
}

// mean per-slot focal loss over the validation split, eval-mode batchnorm,
// no parameter updates
template <class S>
double validate(Model<S>& model, const Dataset& ds, double gamma, double threshold, int threads = 1) {
    if (ds.val_ts.empty()) throw std::invalid_argument("validate: empty validation split");
    const int slots = model.config().horizon + 1;
    std::vector<double> per_sample(ds.val_ts.size(), 0.0);
    parallel_for(ds.val_ts.size(), threads, [&](size_t i) {
        Tape<S> tape(false);
        auto x = sample_input<S>(ds, ds.val_ts[i], threshold);
        auto block = model.forward(tape, x, BnMode::Eval);
        auto loss = task_loss(tape, block, ds.window_labels(ds.val_ts[i]), static_cast<S>(gamma));
        per_sample[i] = static_cast<double>(loss.v()[0]);
    });
    double total = 0.0;
    for (double x : per_sample) total += x;
    return total / (static_cast<double>(ds.val_ts.size()) * slots);
}

// Full training loop: E epochs, validation after each, keeps the parameters
// (and batchnorm statistics) of the epoch with the lowest validation loss.
template <class S>
TrainReport fit(Model<S>& model, const Dataset& ds, const TrainConfig& cfg, int threads = 1) {
    cfg.validate();
    TrainReport report;
    Adam<S> opt(model.params());
    auto best_state = model.state();

    for (int e = 0; e < cfg.epochs; ++e) {
        double train_loss = train_epoch(model, ds, cfg, e, opt);
        double val_loss = validate<S>(model, ds, cfg.gamma, cfg.preprocess_threshold, threads);
        report.rows.push_back({e, train_loss, val_loss, lr_schedule(e, cfg)});
        if (val_loss < report.best_val_loss) {
            report.best_val_loss = val_loss;
            report.best_epoch = e;
            best_state = model.state();
        }
    }
    model.set_state(best_state);
    return report;
}

}  // namespace beamtrack
