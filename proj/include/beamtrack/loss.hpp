#pragma once

#include <stdexcept>
#include <vector>

#include "beamtrack/model.hpp"
#include "beamtrack/tensor.hpp"

namespace beamtrack {

struct LossConfig {
    double gamma = 2.0;

    void validate() const {
        if (gamma < 0) throw config_error("LossConfig: gamma must be >= 0");
    }
};

// -(1 - p_truth)^gamma * log(p_truth) through the log-softmax path; gamma = 0
// reduces to plain cross-entropy. truth is a 1-based beam index.
template <class S>
TensorT<S> focal_loss(Tape<S>& tape, const TensorT<S>& logits, int truth, S gamma) {
    if (gamma < S(0)) throw std::invalid_argument("focal_loss: gamma must be >= 0");
    int c = logits.dim(logits.rank() - 1);
    if (static_cast<size_t>(c) != logits.numel())
        throw std::invalid_argument("focal_loss: expected a single logit row, got " + shape_str(logits.shape()));
    if (truth < 1 || truth > c) throw std::out_of_range("focal_loss: truth index out of range");

    auto lp = log_softmax(tape, logits);
    auto log_pt = pick(tape, lp, static_cast<size_t>(truth - 1));
    auto pt = clamp(tape, exp(tape, log_pt), S(1e-12), S(1) - S(1e-12));
    auto weight = pow_const(tape, affine(tape, pt, S(-1), S(1)), gamma);
    return mul(tape, weight, neg(tape, log_pt));
}

// sum over the J+1 slots of the per-slot focal losses
template <class S>
TensorT<S> task_loss(Tape<S>& tape, const TensorT<S>& logits_rows, const std::vector<int>& labels, S gamma) {
    if (logits_rows.rank() != 2 || static_cast<size_t>(logits_rows.rows()) != labels.size())
        throw std::invalid_argument("task_loss: slot count mismatch");
    TensorT<S> total;
    for (size_t j = 0; j < labels.size(); ++j) {
        auto row = slice_rows(tape, logits_rows, static_cast<int>(j), static_cast<int>(j) + 1);
        auto l = focal_loss(tape, row, labels[j], gamma);
        total = j == 0 ? l : add(tape, total, l);
    }
    return total;
}

template <class S>
TensorT<S> task_loss(Tape<S>& tape, const LogitsBlock<S>& block, const std::vector<int>& labels, S gamma) {
    return task_loss(tape, block.logits, labels, gamma);
}

}  // namespace beamtrack
