#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "beamtrack/loss.hpp"
#include "beamtrack/model.hpp"

namespace beamtrack {

// Full-model gradient verification on the tiny probe configuration
// (8x8 frames, L=2, J=1, C=4): autodiff gradients of the task loss against
// central finite differences, sampling every parameter tensor.

struct GradCheckOptions {
    uint64_t seed = 42;
    double step = 1e-6;
    double tolerance = 1e-4;
    size_t min_samples = 50;
    std::string corrupt_param;  // test hook: falsifies this tensor's gradient
};

struct GradCheckResult {
    struct Entry {
        std::string param;
        size_t index;
        double autodiff;
        double fd;
        double rel_err;
        bool ok;
    };
    std::vector<Entry> entries;
    std::vector<std::string> failed_params;
    double max_rel_err = 0.0;
    bool passed = false;
};

inline ModelConfig gradcheck_config() {
    ModelConfig c;
    c.history = 2;
    c.horizon = 1;
    c.codebook_size = 4;
    c.d_h = 8;
    c.d_w = 8;
    return c;
}

inline GradCheckResult run_gradcheck(const GradCheckOptions& opt = {}) {
    GradCheckResult result;
    ModelConfig cfg = gradcheck_config();
    Model<double> model(cfg);
    model.init_params(opt.seed);

    Rng rng(Rng::mix(opt.seed, 1));
    TensorT<double> frames({cfg.history + 1, cfg.frame_channels, cfg.d_h, cfg.d_w});
    for (auto& v : frames.v()) v = rng.uniform(0.0, 1.0);
    std::vector<int> labels;
    for (int j = 0; j <= cfg.horizon; ++j)
        labels.push_back(1 + static_cast<int>(rng.below(static_cast<uint64_t>(cfg.codebook_size))));

    const double gamma = 2.0;
    auto loss_value = [&] {
        Tape<double> tape(false);
        auto block = model.forward(tape, frames, BnMode::Train);
        return task_loss(tape, block, labels, gamma).v()[0];
    };

    Tape<double> tape;
    auto block = model.forward(tape, frames, BnMode::Train);
    auto loss = task_loss(tape, block, labels, gamma);
    tape.backward(loss);

    auto params = model.params();
    if (!opt.corrupt_param.empty())
        for (auto& p : params)
            if (p.name == opt.corrupt_param)
                for (auto& g : p.t.ensure_grad()) g += 0.5;

    size_t per_tensor = (opt.min_samples + params.size() - 1) / params.size();
    Rng pick_rng(Rng::mix(opt.seed, 2));

    for (auto& p : params) {
        const auto& grad = p.t.has_grad() ? p.t.grad() : p.t.ensure_grad();
        for (size_t s = 0; s < per_tensor; ++s) {
            size_t idx = p.t.numel() == 1 ? 0 : static_cast<size_t>(pick_rng.below(p.t.numel()));
            double orig = p.t.v()[idx];
            p.t.v()[idx] = orig + opt.step;
            double fp = loss_value();
            p.t.v()[idx] = orig - opt.step;
            double fm = loss_value();
            p.t.v()[idx] = orig;
            double fd = (fp - fm) / (2.0 * opt.step);
            double ad = grad[idx];
            double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-4});
            bool ok = rel <= opt.tolerance;
            result.entries.push_back({p.name, idx, ad, fd, rel, ok});
            result.max_rel_err = std::max(result.max_rel_err, rel);
            if (!ok &&
                std::find(result.failed_params.begin(), result.failed_params.end(), p.name) ==
                    result.failed_params.end())
                result.failed_params.push_back(p.name);
            if (p.t.numel() == 1) break;
        }
    }
    result.passed = result.failed_params.empty();
    return result;
}

}  // namespace beamtrack
