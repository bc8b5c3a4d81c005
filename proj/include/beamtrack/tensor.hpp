#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "beamtrack/common.hpp"

namespace beamtrack {

template <class S>
struct TensorData {
    std::vector<int> shape;
    std::vector<S> v;
    std::vector<S> g;  // allocated on first use
    bool requires_grad = false;
};

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

inline size_t shape_numel(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive, got " + shape_str(shape));
        n *= static_cast<size_t>(d);
    }
    return n;
}

// Dense row-major tensor with optional gradient storage. Copying a TensorT
// copies the handle; the payload is shared. Values are written once by the
// op that creates them, gradients accumulate in place during backward.
template <class S>
class TensorT {
   public:
    using Scalar = S;

    TensorT() = default;

    explicit TensorT(std::vector<int> shape, bool requires_grad = false)
        : d_(std::make_shared<TensorData<S>>()) {
        size_t n = shape_numel(shape);
        d_->shape = std::move(shape);
        d_->v.assign(n, S(0));
        d_->requires_grad = requires_grad;
    }

    static TensorT from(std::vector<int> shape, std::vector<S> values, bool requires_grad = false) {
        if (shape_numel(shape) != values.size())
            throw std::invalid_argument("value count does not match shape " + shape_str(shape));
        TensorT t;
        t.d_ = std::make_shared<TensorData<S>>();
        t.d_->shape = std::move(shape);
        t.d_->v = std::move(values);
        t.d_->requires_grad = requires_grad;
        return t;
    }

    static TensorT scalar(S x) { return from({1}, {x}); }

    static TensorT full(std::vector<int> shape, S x) {
        TensorT t(std::move(shape));
        for (auto& e : t.v()) e = x;
        return t;
    }

    bool defined() const { return d_ != nullptr; }
    const std::vector<int>& shape() const { return d_->shape; }
    int rank() const { return static_cast<int>(d_->shape.size()); }
    int dim(int i) const { return d_->shape[static_cast<size_t>(i)]; }
    size_t numel() const { return d_->v.size(); }

    int rows() const {
        assert(rank() == 2);
        return d_->shape[0];
    }
    int cols() const {
        assert(rank() == 2);
        return d_->shape[1];
    }

    // handle semantics: a const TensorT still refers to mutable payload,
    // mirroring shared_ptr
    std::vector<S>& v() const { return d_->v; }

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool rg) const { d_->requires_grad = rg; }

    bool has_grad() const { return !d_->g.empty(); }
    std::vector<S>& ensure_grad() const {
        if (d_->g.empty()) d_->g.assign(d_->v.size(), S(0));
        return d_->g;
    }
    std::vector<S>& grad() const { return d_->g; }
    void zero_grad() const {
        if (!d_->g.empty()) std::fill(d_->g.begin(), d_->g.end(), S(0));
    }

    S& at(int i) const { return d_->v[static_cast<size_t>(i)]; }
    S& at(int i, int j) const {
        assert(rank() == 2);
        return d_->v[static_cast<size_t>(i) * dim(1) + j];
    }

    TensorT clone() const {
        TensorT t;
        t.d_ = std::make_shared<TensorData<S>>();
        t.d_->shape = d_->shape;
        t.d_->v = d_->v;
        t.d_->requires_grad = d_->requires_grad;
        return t;
    }

    TensorData<S>* id() const { return d_.get(); }

   private:
    std::shared_ptr<TensorData<S>> d_;
};

// Ordered record of executed ops. Ops are appended in execution order, which
// is a topological order by construction; backward replays them once in
// reverse and marks the tape consumed.
template <class S>
class Tape {
   public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }
    size_t size() const { return steps_.size(); }

    void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

    void backward(TensorT<S> output, S seed = S(1)) {
        if (output.numel() != 1)
            throw std::invalid_argument("backward requires a scalar output, got " + shape_str(output.shape()));
        if (consumed_) throw std::logic_error("tape already consumed by a previous backward pass");
        output.ensure_grad()[0] = seed;
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
        consumed_ = true;
    }

   private:
    std::vector<std::function<void()>> steps_;
    bool recording_;
    bool consumed_ = false;
};

namespace detail {

template <class S>
bool track(const Tape<S>& tape, std::initializer_list<const TensorT<S>*> inputs) {
    if (!tape.recording()) return false;
    for (const TensorT<S>* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

inline void check_same_shape(const std::vector<int>& a, const std::vector<int>& b, const char* op) {
    if (a != b)
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// raw matmul kernels, all accumulate into c
template <class S>
void mm_nn_acc(const S* __restrict a, const S* __restrict b, S* __restrict c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        S* cr = c + static_cast<size_t>(i) * n;
        const S* ar = a + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            S s = ar[p];
            const S* br = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) cr[j] += s * br[j];
        }
    }
}

// c[m×n] += a[m×k] * b[n×k]^T. The dot product uses eight independent
// accumulators (a fixed summation tree, so results stay deterministic) to
// expose SIMD parallelism without reassociation flags.
template <class S>
void mm_nt_acc(const S* __restrict a, const S* __restrict b, S* __restrict c, int m, int k, int n) {
    const int k8 = k - (k % 8);
    for (int i = 0; i < m; ++i) {
        const S* ar = a + static_cast<size_t>(i) * k;
        S* cr = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const S* br = b + static_cast<size_t>(j) * k;
            S s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
            for (int p = 0; p < k8; p += 8) {
                s0 += ar[p] * br[p];
                s1 += ar[p + 1] * br[p + 1];
                s2 += ar[p + 2] * br[p + 2];
                s3 += ar[p + 3] * br[p + 3];
                s4 += ar[p + 4] * br[p + 4];
                s5 += ar[p + 5] * br[p + 5];
                s6 += ar[p + 6] * br[p + 6];
                s7 += ar[p + 7] * br[p + 7];
            }
            S acc = ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
            for (int p = k8; p < k; ++p) acc += ar[p] * br[p];
            cr[j] += acc;
        }
    }
}

// c[k×n] += a[m×k]^T * b[m×n]
template <class S>
void mm_tn_acc(const S* __restrict a, const S* __restrict b, S* __restrict c, int m, int k, int n) {
    for (int p = 0; p < m; ++p) {
        const S* ar = a + static_cast<size_t>(p) * k;
        const S* br = b + static_cast<size_t>(p) * n;
        for (int i = 0; i < k; ++i) {
            S s = ar[i];
            S* cr = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) cr[j] += s * br[j];
        }
    }
}

inline int ceil_div(int a, int b) {  // b > 0
    return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}
inline int floor_div(int a, int b) {  // b > 0
    return a >= 0 ? a / b : -((-a + b - 1) / b);
}

}  // namespace detail

// ---- elementwise ----

template <class S>
TensorT<S> add(Tape<S>& tape, const TensorT<S>& a, const TensorT<S>& b) {
    detail::check_same_shape(a.shape(), b.shape(), "add");
    TensorT<S> out(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) out.v()[i] = a.v()[i] + b.v()[i];
    if (detail::track(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape.record([a, b, out]() {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.ensure_grad();
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.ensure_grad();
                for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> sub(Tape<S>& tape, const TensorT<S>& a, const TensorT<S>& b) {
    detail::check_same_shape(a.shape(), b.shape(), "sub");
    TensorT<S> out(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) out.v()[i] = a.v()[i] - b.v()[i];
    if (detail::track(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape.record([a, b, out]() {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.ensure_grad();
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.ensure_grad();
                for (size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> mul(Tape<S>& tape, const TensorT<S>& a, const TensorT<S>& b) {
    detail::check_same_shape(a.shape(), b.shape(), "mul");
    TensorT<S> out(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) out.v()[i] = a.v()[i] * b.v()[i];
    if (detail::track(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape.record([a, b, out]() {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.ensure_grad();
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * b.v()[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.ensure_grad();
                for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * a.v()[i];
            }
        });
    }
    return out;
}

// out = alpha * a + beta, elementwise
template <class S>
TensorT<S> affine(Tape<S>& tape, const TensorT<S>& a, S alpha, S beta) {
    TensorT<S> out(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) out.v()[i] = alpha * a.v()[i] + beta;
    if (detail::track(tape, {&a})) {
        out.set_requires_grad(true);
        tape.record([a, out, alpha]() {
            if (!out.has_grad() || !a.requires_grad()) return;
            const auto& go = out.grad();
            auto& ga = a.ensure_grad();
            for (size_t i = 0; i < go.size(); ++i) ga[i] += alpha * go[i];
        });
    }
    return out;
}

template <class S>
TensorT<S> neg(Tape<S>& tape, const TensorT<S>& a) {
    return affine(tape, a, S(-1), S(0));
}

// a[m×n] + row-broadcast bias[n]
template <class S>
TensorT<S> add_rowbias(Tape<S>& tape, const TensorT<S>& a, const TensorT<S>& bias) {
    if (a.rank() != 2 || bias.numel() != static_cast<size_t>(a.cols()))
        throw std::invalid_argument("add_rowbias: need [m×n] and bias [n], got " + shape_str(a.shape()) + " and " +
                                    shape_str(bias.shape()));
    int m = a.rows(), n = a.cols();
    TensorT<S> out(a.shape());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = a.at(i, j) + bias.v()[static_cast<size_t>(j)];
    if (detail::track(tape, {&a, &bias})) {
        out.set_requires_grad(true);
        tape.record([a, bias, out, m, n]() {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.ensure_grad();
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (bias.requires_grad()) {
                auto& gb = bias.ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) gb[static_cast<size_t>(j)] += go[static_cast<size_t>(i) * n + j];
            }
        });
    }
    return out;
}

// ---- matrix products ----

template <class S>
TensorT<S> matmul(Tape<S>& tape, const TensorT<S>& a, const TensorT<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()));
    int m = a.rows(), k = a.cols(), n = b.cols();
    TensorT<S> out({m, n});
    detail::mm_nn_acc(a.v().data(), b.v().data(), out.v().data(), m, k, n);
    if (detail::track(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape.record([a, b, out, m, k, n]() {
            if (!out.has_grad()) return;
            const S* go = out.grad().data();
            if (a.requires_grad()) detail::mm_nt_acc(go, b.v().data(), a.ensure_grad().data(), m, n, k);
            if (b.requires_grad()) detail::mm_tn_acc(a.v().data(), go, b.ensure_grad().data(), m, k, n);
        });
    }
    return out;
}

// a[m×k] * b[n×k]^T -> [m×n]
template <class S>
TensorT<S> matmul_nt(Tape<S>& tape, const TensorT<S>& a, const TensorT<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols())
        throw std::invalid_argument("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()));
    int m = a.rows(), k = a.cols(), n = b.rows();
    TensorT<S> out({m, n});
    detail::mm_nt_acc(a.v().data(), b.v().data(), out.v().data(), m, k, n);
    if (detail::track(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape.record([a, b, out, m, k, n]() {
            if (!out.has_grad()) return;
            const S* go = out.grad().data();
            if (a.requires_grad()) detail::mm_nn_acc(go, b.v().data(), a.ensure_grad().data(), m, n, k);
            if (b.requires_grad()) detail::mm_tn_acc(go, a.v().data(), b.ensure_grad().data(), m, n, k);
        });
    }
    return out;
}

// ---- activations ----

enum class Act { Relu, Sigmoid, Tanh };

template <class S>
TensorT<S> relu(Tape<S>& tape, const TensorT<S>& x) {
    TensorT<S> out(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) out.v()[i] = x.v()[i] > S(0) ? x.v()[i] : S(0);
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        tape.record([x, out]() {
            if (!out.has_grad() || !x.requires_grad()) return;
            const auto& go = out.grad();
            auto& gx = x.ensure_grad();
            for (size_t i = 0; i < go.size(); ++i)
                if (x.v()[i] > S(0)) gx[i] += go[i];
        });
    }
    return out;
}

template <class S>
TensorT<S> sigmoid(Tape<S>& tape, const TensorT<S>& x) {
    TensorT<S> out(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) out.v()[i] = S(1) / (S(1) + std::exp(-x.v()[i]));
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        tape.record([x, out]() {
            if (!out.has_grad() || !x.requires_grad()) return;
            const auto& go = out.grad();
            auto& gx = x.ensure_grad();
            for (size_t i = 0; i < go.size(); ++i) {
                S s = out.v()[i];
                gx[i] += go[i] * s * (S(1) - s);
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> tanh(Tape<S>& tape, const TensorT<S>& x) {
    TensorT<S> out(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) out.v()[i] = std::tanh(x.v()[i]);
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        tape.record([x, out]() {
            if (!out.has_grad() || !x.requires_grad()) return;
            const auto& go = out.grad();
            auto& gx = x.ensure_grad();
            for (size_t i = 0; i < go.size(); ++i) {
                S t = out.v()[i];
                gx[i] += go[i] * (S(1) - t * t);
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> activation(Tape<S>& tape, const TensorT<S>& x, Act kind) {
    switch (kind) {
        case Act::Relu: return relu(tape, x);
        case Act::Sigmoid: return sigmoid(tape, x);
        default: return tanh(tape, x);
    }
}

template <class S>
TensorT<S> exp(Tape<S>& tape, const TensorT<S>& x) {
    TensorT<S> out(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) out.v()[i] = std::exp(x.v()[i]);
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        tape.record([x, out]() {
            if (!out.has_grad() || !x.requires_grad()) return;
            const auto& go = out.grad();
            auto& gx = x.ensure_grad();
            for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * out.v()[i];
        });
    }
    return out;
}

// clamps values; gradient passes through only where the value was not clipped
template <class S>
TensorT<S> clamp(Tape<S>& tape, const TensorT<S>& x, S lo, S hi) {
    TensorT<S> out(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) out.v()[i] = std::min(hi, std::max(lo, x.v()[i]));
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        tape.record([x, out, lo, hi]() {
            if (!out.has_grad() || !x.requires_grad()) return;
            const auto& go = out.grad();
            auto& gx = x.ensure_grad();
            for (size_t i = 0; i < go.size(); ++i)
                if (x.v()[i] > lo && x.v()[i] < hi) gx[i] += go[i];
        });
    }
    return out;
}

// x^p with constant exponent; x must be nonnegative when p is fractional
template <class S>
TensorT<S> pow_const(Tape<S>& tape, const TensorT<S>& x, S p) {
    TensorT<S> out(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) out.v()[i] = std::pow(x.v()[i], p);
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        tape.record([x, out, p]() {
            if (!out.has_grad() || !x.requires_grad()) return;
            const auto& go = out.grad();
            auto& gx = x.ensure_grad();
            if (p == S(0)) return;
            for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * p * std::pow(x.v()[i], p - S(1));
        });
    }
    return out;
}

// ---- softmax family (over the last dimension) ----

namespace detail {
template <class S>
std::pair<int, int> as_rows(const TensorT<S>& z) {
    int c = z.dim(z.rank() - 1);
    int r = static_cast<int>(z.numel()) / c;
    return {r, c};
}
}  // namespace detail

template <class S>
TensorT<S> softmax(Tape<S>& tape, const TensorT<S>& z) {
    for (S x : z.v())
        if (!std::isfinite(x)) throw std::runtime_error("softmax: non-finite input");
    auto [r, c] = detail::as_rows(z);
    TensorT<S> out(z.shape());
    for (int i = 0; i < r; ++i) {
        const S* zi = z.v().data() + static_cast<size_t>(i) * c;
        S* oi = out.v().data() + static_cast<size_t>(i) * c;
        S mx = zi[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, zi[j]);
        S sum = S(0);
        for (int j = 0; j < c; ++j) {
            oi[j] = std::exp(zi[j] - mx);
            sum += oi[j];
        }
        for (int j = 0; j < c; ++j) oi[j] /= sum;
    }
    if (detail::track(tape, {&z})) {
        out.set_requires_grad(true);
        tape.record([z, out, r, c]() {
            if (!out.has_grad() || !z.requires_grad()) return;
            auto& gz = z.ensure_grad();
            for (int i = 0; i < r; ++i) {
                const S* p = out.v().data() + static_cast<size_t>(i) * c;
                const S* go = out.grad().data() + static_cast<size_t>(i) * c;
                S dot = S(0);
                for (int j = 0; j < c; ++j) dot += go[j] * p[j];
                S* g = gz.data() + static_cast<size_t>(i) * c;
                for (int j = 0; j < c; ++j) g[j] += p[j] * (go[j] - dot);
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> log_softmax(Tape<S>& tape, const TensorT<S>& z) {
    for (S x : z.v())
        if (!std::isfinite(x)) throw std::runtime_error("log_softmax: non-finite input");
    auto [r, c] = detail::as_rows(z);
    TensorT<S> out(z.shape());
    for (int i = 0; i < r; ++i) {
        const S* zi = z.v().data() + static_cast<size_t>(i) * c;
        S* oi = out.v().data() + static_cast<size_t>(i) * c;
        S mx = zi[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, zi[j]);
        S sum = S(0);
        for (int j = 0; j < c; ++j) sum += std::exp(zi[j] - mx);
        S lse = mx + std::log(sum);
        for (int j = 0; j < c; ++j) oi[j] = zi[j] - lse;
    }
    if (detail::track(tape, {&z})) {
        out.set_requires_grad(true);
        tape.record([z, out, r, c]() {
            if (!out.has_grad() || !z.requires_grad()) return;
            auto& gz = z.ensure_grad();
            for (int i = 0; i < r; ++i) {
                const S* lp = out.v().data() + static_cast<size_t>(i) * c;
                const S* go = out.grad().data() + static_cast<size_t>(i) * c;
                S gsum = S(0);
                for (int j = 0; j < c; ++j) gsum += go[j];
                S* g = gz.data() + static_cast<size_t>(i) * c;
                for (int j = 0; j < c; ++j) g[j] += go[j] - std::exp(lp[j]) * gsum;
            }
        });
    }
    return out;
}

// ---- shape plumbing ----

template <class S>
TensorT<S> reshape(Tape<S>& tape, const TensorT<S>& a, std::vector<int> new_shape) {
    if (shape_numel(new_shape) != a.numel())
        throw std::invalid_argument("reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
                                    shape_str(new_shape));
    TensorT<S> out = TensorT<S>::from(std::move(new_shape), a.v());
    if (detail::track(tape, {&a})) {
        out.set_requires_grad(true);
        tape.record([a, out]() {
            if (!out.has_grad() || !a.requires_grad()) return;
            const auto& go = out.grad();
            auto& ga = a.ensure_grad();
            for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        });
    }
    return out;
}

// selects rows by index (duplicates allowed); backward scatter-adds
template <class S>
TensorT<S> gather_rows(Tape<S>& tape, const TensorT<S>& a, std::vector<int> rows) {
    if (a.rank() != 2) throw std::invalid_argument("gather_rows: need a matrix, got " + shape_str(a.shape()));
    for (int r : rows)
        if (r < 0 || r >= a.rows()) throw std::out_of_range("gather_rows: row index out of range");
    int n = a.cols();
    TensorT<S> out({static_cast<int>(rows.size()), n});
    for (size_t i = 0; i < rows.size(); ++i)
        std::copy(a.v().begin() + static_cast<size_t>(rows[i]) * n,
                  a.v().begin() + static_cast<size_t>(rows[i] + 1) * n, out.v().begin() + i * n);
    if (detail::track(tape, {&a})) {
        out.set_requires_grad(true);
        auto rows_c = std::make_shared<std::vector<int>>(std::move(rows));
        tape.record([a, out, rows_c, n]() {
            if (!out.has_grad() || !a.requires_grad()) return;
            const auto& go = out.grad();
            auto& ga = a.ensure_grad();
            for (size_t i = 0; i < rows_c->size(); ++i)
                for (int j = 0; j < n; ++j)
                    ga[static_cast<size_t>((*rows_c)[i]) * n + j] += go[i * static_cast<size_t>(n) + j];
        });
    }
    return out;
}

template <class S>
TensorT<S> slice_rows(Tape<S>& tape, const TensorT<S>& a, int r0, int r1) {
    if (a.rank() != 2 || r0 < 0 || r1 > a.rows() || r0 >= r1)
        throw std::invalid_argument("slice_rows: bad range on " + shape_str(a.shape()));
    int n = a.cols();
    TensorT<S> out({r1 - r0, n});
    std::copy(a.v().begin() + static_cast<size_t>(r0) * n, a.v().begin() + static_cast<size_t>(r1) * n,
              out.v().begin());
    if (detail::track(tape, {&a})) {
        out.set_requires_grad(true);
        tape.record([a, out, r0, n]() {
            if (!out.has_grad() || !a.requires_grad()) return;
            const auto& go = out.grad();
            auto& ga = a.ensure_grad();
            size_t base = static_cast<size_t>(r0) * n;
            for (size_t i = 0; i < go.size(); ++i) ga[base + i] += go[i];
        });
    }
    return out;
}

template <class S>
TensorT<S> concat_rows(Tape<S>& tape, const std::vector<TensorT<S>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
    int n = parts[0].cols();
    int m = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.cols() != n) throw std::invalid_argument("concat_rows: column mismatch");
        m += p.rows();
    }
    TensorT<S> out({m, n});
    size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.v().begin(), p.v().end(), out.v().begin() + off);
        off += p.numel();
    }
    bool tracked = false;
    if (tape.recording())
        for (const auto& p : parts) tracked = tracked || p.requires_grad();
    if (tracked) {
        out.set_requires_grad(true);
        auto parts_copy = parts;
        tape.record([parts_copy, out]() {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            size_t off = 0;
            for (auto& p : parts_copy) {
                if (p.requires_grad()) {
                    auto& gp = p.ensure_grad();
                    for (size_t i = 0; i < gp.size(); ++i) gp[i] += go[off + i];
                }
                off += p.numel();
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> concat_cols(Tape<S>& tape, const std::vector<TensorT<S>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
    int m = parts[0].rows();
    int n = 0;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.rows() != m) throw std::invalid_argument("concat_cols: row mismatch");
        n += p.cols();
    }
    TensorT<S> out({m, n});
    int coff = 0;
    for (const auto& p : parts) {
        for (int i = 0; i < m; ++i)
            std::copy(p.v().begin() + static_cast<size_t>(i) * p.cols(),
                      p.v().begin() + static_cast<size_t>(i + 1) * p.cols(),
                      out.v().begin() + static_cast<size_t>(i) * n + coff);
        coff += p.cols();
    }
    bool tracked = false;
    if (tape.recording())
        for (const auto& p : parts) tracked = tracked || p.requires_grad();
    if (tracked) {
        out.set_requires_grad(true);
        auto parts_copy = parts;
        tape.record([parts_copy, out, m, n]() {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            int coff = 0;
            for (auto& p : parts_copy) {
                if (p.requires_grad()) {
                    auto& gp = p.ensure_grad();
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < p.cols(); ++j)
                            gp[static_cast<size_t>(i) * p.cols() + j] += go[static_cast<size_t>(i) * n + coff + j];
                }
                coff += p.cols();
            }
        });
    }
    return out;
}

template <class S>
TensorT<S> mean_rows(Tape<S>& tape, const TensorT<S>& a) {
    if (a.rank() != 2) throw std::invalid_argument("mean_rows: need a matrix, got " + shape_str(a.shape()));
    int m = a.rows(), n = a.cols();
    TensorT<S> out({1, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.v()[static_cast<size_t>(j)] += a.at(i, j);
    for (int j = 0; j < n; ++j) out.v()[static_cast<size_t>(j)] /= S(m);
    if (detail::track(tape, {&a})) {
        out.set_requires_grad(true);
        tape.record([a, out, m, n]() {
            if (!out.has_grad() || !a.requires_grad()) return;
            const auto& go = out.grad();
            auto& ga = a.ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) ga[static_cast<size_t>(i) * n + j] += go[static_cast<size_t>(j)] / S(m);
        });
    }
    return out;
}

template <class S>
TensorT<S> sum_all(Tape<S>& tape, const TensorT<S>& a) {
    TensorT<S> out({1});
    S acc = S(0);
    for (S x : a.v()) acc += x;
    out.v()[0] = acc;
    if (detail::track(tape, {&a})) {
        out.set_requires_grad(true);
        tape.record([a, out]() {
            if (!out.has_grad() || !a.requires_grad()) return;
            S go = out.grad()[0];
            auto& ga = a.ensure_grad();
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += go;
        });
    }
    return out;
}

// selects one element as a [1] tensor
template <class S>
TensorT<S> pick(Tape<S>& tape, const TensorT<S>& a, size_t flat_index) {
    if (flat_index >= a.numel()) throw std::out_of_range("pick: index out of range");
    TensorT<S> out({1});
    out.v()[0] = a.v()[flat_index];
    if (detail::track(tape, {&a})) {
        out.set_requires_grad(true);
        tape.record([a, out, flat_index]() {
            if (!out.has_grad() || !a.requires_grad()) return;
            a.ensure_grad()[flat_index] += out.grad()[0];
        });
    }
    return out;
}

// ---- spatial ops ----

namespace detail {
// interprets [c×H×W] as batch of one; returns (B, C, H, W, was_3d)
template <class S>
std::tuple<int, int, int, int, bool> spatial_dims(const TensorT<S>& x, const char* op) {
    if (x.rank() == 3) return {1, x.dim(0), x.dim(1), x.dim(2), true};
    if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), false};
    throw std::invalid_argument(std::string(op) + ": need [c×H×W] or [B×c×H×W], got " + shape_str(x.shape()));
}
}  // namespace detail

namespace detail {

// unfolds one [ci×H×W] image into the [ci·kh·kw × ho·wo] patch matrix
template <class S>
void im2col(const S* __restrict img, int ci, int h, int w, int kh, int kw, int stride, int pad, int ho, int wo,
            S* __restrict col) {
    size_t r = 0;
    for (int c = 0; c < ci; ++c) {
        const S* plane = img + static_cast<size_t>(c) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx, ++r) {
                S* dst = col + r * static_cast<size_t>(ho) * wo;
                int ox_lo = std::max(0, ceil_div(pad - kx, stride));
                int ox_hi = std::min(wo, floor_div(w - 1 - kx + pad, stride) + 1);
                for (int oy = 0; oy < ho; ++oy) {
                    int iy = oy * stride + ky - pad;
                    S* drow = dst + static_cast<size_t>(oy) * wo;
                    if (iy < 0 || iy >= h) {
                        std::fill(drow, drow + wo, S(0));
                        continue;
                    }
                    const S* srow = plane + static_cast<size_t>(iy) * w;
                    std::fill(drow, drow + ox_lo, S(0));
                    if (stride == 1) {
                        const S* s = srow + (ox_lo + kx - pad);
                        std::copy(s, s + (ox_hi - ox_lo), drow + ox_lo);
                    } else {
                        for (int ox = ox_lo; ox < ox_hi; ++ox) drow[ox] = srow[ox * stride + kx - pad];
                    }
                    std::fill(drow + ox_hi, drow + wo, S(0));
                }
            }
        }
    }
}

// scatter-adds a patch-matrix gradient back onto the image gradient
template <class S>
void col2im_acc(const S* __restrict col, int ci, int h, int w, int kh, int kw, int stride, int pad, int ho, int wo,
                S* __restrict img) {
    size_t r = 0;
    for (int c = 0; c < ci; ++c) {
        S* plane = img + static_cast<size_t>(c) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx, ++r) {
                const S* src = col + r * static_cast<size_t>(ho) * wo;
                int ox_lo = std::max(0, ceil_div(pad - kx, stride));
                int ox_hi = std::min(wo, floor_div(w - 1 - kx + pad, stride) + 1);
                for (int oy = 0; oy < ho; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    const S* srow = src + static_cast<size_t>(oy) * wo;
                    S* drow = plane + static_cast<size_t>(iy) * w + (kx - pad);
                    if (stride == 1) {
                        for (int ox = ox_lo; ox < ox_hi; ++ox) drow[ox] += srow[ox];
                    } else {
                        for (int ox = ox_lo; ox < ox_hi; ++ox) drow[ox * stride] += srow[ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// cross-correlation with zero padding via im2col + matmul; kernel
// [co×ci×kh×kw] (viewed as [co × ci·kh·kw] against the patch matrix)
template <class S>
TensorT<S> conv2d(Tape<S>& tape, const TensorT<S>& x, const TensorT<S>& k, int stride = 1, int pad = 0) {
    auto [B, CI, H, W, was_3d] = detail::spatial_dims(x, "conv2d");
    if (k.rank() != 4 || k.dim(1) != CI)
        throw std::invalid_argument("conv2d: kernel " + shape_str(k.shape()) + " does not match input channels " +
                                    std::to_string(CI));
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (pad < 0) throw std::invalid_argument("conv2d: pad must be >= 0");
    int CO = k.dim(0), KH = k.dim(2), KW = k.dim(3);
    if (KH > H + 2 * pad || KW > W + 2 * pad)
        throw std::invalid_argument("conv2d: kernel larger than padded input");
    const int HO = (H + 2 * pad - KH) / stride + 1;
    const int WO = (W + 2 * pad - KW) / stride + 1;
    const int R = CI * KH * KW;
    const int P = HO * WO;

    TensorT<S> out(was_3d ? std::vector<int>{CO, HO, WO} : std::vector<int>{B, CO, HO, WO});
    std::vector<S> col(static_cast<size_t>(R) * P);
    for (int b = 0; b < B; ++b) {
        const S* img = x.v().data() + static_cast<size_t>(b) * CI * H * W;
        detail::im2col(img, CI, H, W, KH, KW, stride, pad, HO, WO, col.data());
        detail::mm_nn_acc(k.v().data(), col.data(), out.v().data() + static_cast<size_t>(b) * CO * P, CO, R, P);
    }

    if (detail::track(tape, {&x, &k})) {
        out.set_requires_grad(true);
        // the patch matrix is rebuilt in backward rather than retained; it is
        // cheap next to the matmuls and keeps batch tapes small
        int b_ = B, ci_ = CI, h_ = H, w_ = W, co_ = CO, kh_ = KH, kw_ = KW, ho_ = HO, wo_ = WO;
        tape.record([x, k, out, b_, ci_, h_, w_, co_, kh_, kw_, ho_, wo_, stride, pad]() {
            if (!out.has_grad()) return;
            const int R = ci_ * kh_ * kw_;
            const int P = ho_ * wo_;
            const bool need_dx = x.requires_grad();
            const bool need_dk = k.requires_grad();
            if (!need_dx && !need_dk) return;
            S* dk = need_dk ? k.ensure_grad().data() : nullptr;
            S* dx = need_dx ? x.ensure_grad().data() : nullptr;
            std::vector<S> col(static_cast<size_t>(R) * P);
            std::vector<S> dcol;
            for (int b = 0; b < b_; ++b) {
                const S* gout = out.grad().data() + static_cast<size_t>(b) * co_ * P;
                if (need_dk) {
                    detail::im2col(x.v().data() + static_cast<size_t>(b) * ci_ * h_ * w_, ci_, h_, w_, kh_, kw_,
                                   stride, pad, ho_, wo_, col.data());
                    detail::mm_nt_acc(gout, col.data(), dk, co_, P, R);
                }
                if (need_dx) {
                    dcol.assign(static_cast<size_t>(R) * P, S(0));
                    detail::mm_tn_acc(k.v().data(), gout, dcol.data(), co_, R, P);
                    detail::col2im_acc(dcol.data(), ci_, h_, w_, kh_, kw_, stride, pad, ho_, wo_,
                                       dx + static_cast<size_t>(b) * ci_ * h_ * w_);
                }
            }
        });
    }
    return out;
}

// per-window maximum; gradient routes to the first maximal element in
// row-major window order
template <class S>
TensorT<S> maxpool2d(Tape<S>& tape, const TensorT<S>& x, int window, int stride) {
    auto [B, C, H, W, was_3d] = detail::spatial_dims(x, "maxpool2d");
    if (window < 1 || stride < 1) throw std::invalid_argument("maxpool2d: window and stride must be >= 1");
    if (window > H || window > W) throw std::invalid_argument("maxpool2d: window exceeds input size");
    int HO = (H - window) / stride + 1;
    int WO = (W - window) / stride + 1;
    TensorT<S> out(was_3d ? std::vector<int>{C, HO, WO} : std::vector<int>{B, C, HO, WO});
    auto argmax = std::make_shared<std::vector<size_t>>(out.numel());
    const S* xv = x.v().data();
    S* ov = out.v().data();
    size_t oi = 0;
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            const S* plane = xv + (static_cast<size_t>(b) * C + c) * H * W;
            size_t plane_off = (static_cast<size_t>(b) * C + c) * H * W;
            for (int oy = 0; oy < HO; ++oy) {
                for (int ox = 0; ox < WO; ++ox, ++oi) {
                    int y0 = oy * stride, x0 = ox * stride;
                    S best = plane[y0 * W + x0];
                    size_t best_idx = plane_off + y0 * W + x0;
                    for (int dy = 0; dy < window; ++dy) {
                        for (int dx = 0; dx < window; ++dx) {
                            S val = plane[(y0 + dy) * W + (x0 + dx)];
                            if (val > best) {
                                best = val;
                                best_idx = plane_off + (y0 + dy) * W + (x0 + dx);
                            }
                        }
                    }
                    ov[oi] = best;
                    (*argmax)[oi] = best_idx;
                }
            }
        }
    }
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        tape.record([x, out, argmax]() {
            if (!out.has_grad() || !x.requires_grad()) return;
            const auto& go = out.grad();
            auto& gx = x.ensure_grad();
            for (size_t i = 0; i < go.size(); ++i) gx[(*argmax)[i]] += go[i];
        });
    }
    return out;
}

// [B×c×H×W] -> [B×c] spatial mean
template <class S>
TensorT<S> global_avg_pool(Tape<S>& tape, const TensorT<S>& x) {
    if (x.rank() != 4) throw std::invalid_argument("global_avg_pool: need [B×c×H×W], got " + shape_str(x.shape()));
    int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    TensorT<S> out({B, C});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const S* plane = x.v().data() + (static_cast<size_t>(b) * C + c) * HW;
            S acc = S(0);
            for (int i = 0; i < HW; ++i) acc += plane[i];
            out.at(b, c) = acc / S(HW);
        }
    if (detail::track(tape, {&x})) {
        out.set_requires_grad(true);
        tape.record([x, out, B, C, HW]() {
            if (!out.has_grad() || !x.requires_grad()) return;
            const auto& go = out.grad();
            auto& gx = x.ensure_grad();
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    S g = go[static_cast<size_t>(b) * C + c] / S(HW);
                    S* plane = gx.data() + (static_cast<size_t>(b) * C + c) * HW;
                    for (int i = 0; i < HW; ++i) plane[i] += g;
                }
        });
    }
    return out;
}

// ---- batch normalization ----

enum class BnMode { Train, Eval };

template <class S>
struct BnState {
    std::vector<S> running_mean;
    std::vector<S> running_var;
    int64_t num_batches = 0;
};

// Train mode normalizes by batch statistics (biased variance) and updates the
// running estimates with the unbiased variance, eval mode uses the running
// estimates. Eval before any update is a state error.
template <class S>
TensorT<S> batchnorm2d(Tape<S>& tape, const TensorT<S>& x, const TensorT<S>& gamma, const TensorT<S>& beta,
                       BnMode mode, BnState<S>& state, S eps = S(1e-5), S momentum = S(0.1)) {
    if (x.rank() != 4) throw std::invalid_argument("batchnorm2d: need [B×c×H×W], got " + shape_str(x.shape()));
    if (!(eps > S(0))) throw std::invalid_argument("batchnorm2d: eps must be > 0");
    int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    if (gamma.numel() != static_cast<size_t>(C) || beta.numel() != static_cast<size_t>(C))
        throw std::invalid_argument("batchnorm2d: gamma/beta must have one entry per channel");
    if (state.running_mean.empty()) {
        state.running_mean.assign(C, S(0));
        state.running_var.assign(C, S(0));
    }
    const size_t n = static_cast<size_t>(B) * HW;

    std::vector<S> mean(C), ivar(C);
    if (mode == BnMode::Train) {
        for (int c = 0; c < C; ++c) {
            S acc = S(0);
            for (int b = 0; b < B; ++b) {
                const S* plane = x.v().data() + (static_cast<size_t>(b) * C + c) * HW;
                for (int i = 0; i < HW; ++i) acc += plane[i];
            }
            mean[c] = acc / S(n);
            S vacc = S(0);
            for (int b = 0; b < B; ++b) {
                const S* plane = x.v().data() + (static_cast<size_t>(b) * C + c) * HW;
                for (int i = 0; i < HW; ++i) {
                    S d = plane[i] - mean[c];
                    vacc += d * d;
                }
            }
            S var = vacc / S(n);
            ivar[c] = S(1) / std::sqrt(var + eps);
            S unbiased = n > 1 ? vacc / S(n - 1) : var;
            state.running_mean[c] = (S(1) - momentum) * state.running_mean[c] + momentum * mean[c];
            state.running_var[c] = (S(1) - momentum) * state.running_var[c] + momentum * unbiased;
        }
        state.num_batches++;
    } else {
        if (state.num_batches == 0)
            throw std::logic_error("batchnorm2d: eval mode before any training update");
        for (int c = 0; c < C; ++c) {
            mean[c] = state.running_mean[c];
            ivar[c] = S(1) / std::sqrt(state.running_var[c] + eps);
        }
    }

    TensorT<S> out(x.shape());
    auto xhat = std::make_shared<std::vector<S>>(x.numel());
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const S* plane = x.v().data() + (static_cast<size_t>(b) * C + c) * HW;
            S* op = out.v().data() + (static_cast<size_t>(b) * C + c) * HW;
            S* xh = xhat->data() + (static_cast<size_t>(b) * C + c) * HW;
            S g = gamma.v()[static_cast<size_t>(c)], bb = beta.v()[static_cast<size_t>(c)];
            for (int i = 0; i < HW; ++i) {
                xh[i] = (plane[i] - mean[c]) * ivar[c];
                op[i] = g * xh[i] + bb;
            }
        }

    if (detail::track(tape, {&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        bool train = mode == BnMode::Train;
        auto mean_c = std::make_shared<std::vector<S>>(std::move(mean));
        auto ivar_c = std::make_shared<std::vector<S>>(std::move(ivar));
        tape.record([x, gamma, beta, out, xhat, mean_c, ivar_c, train, B, C, HW]() {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            const size_t n = static_cast<size_t>(B) * HW;
            for (int c = 0; c < C; ++c) {
                S sum_go = S(0), sum_go_xh = S(0);
                for (int b = 0; b < B; ++b) {
                    const size_t off = (static_cast<size_t>(b) * C + c) * HW;
                    for (int i = 0; i < HW; ++i) {
                        sum_go += go[off + i];
                        sum_go_xh += go[off + i] * (*xhat)[off + i];
                    }
                }
                if (gamma.requires_grad()) gamma.ensure_grad()[static_cast<size_t>(c)] += sum_go_xh;
                if (beta.requires_grad()) beta.ensure_grad()[static_cast<size_t>(c)] += sum_go;
                if (x.requires_grad()) {
                    auto& gx = x.ensure_grad();
                    S g = gamma.v()[static_cast<size_t>(c)];
                    S iv = (*ivar_c)[c];
                    if (train) {
                        for (int b = 0; b < B; ++b) {
                            const size_t off = (static_cast<size_t>(b) * C + c) * HW;
                            for (int i = 0; i < HW; ++i) {
                                S dxhat = go[off + i] * g;
                                gx[off + i] += iv * (dxhat - (g * sum_go) / S(n) -
                                                     (*xhat)[off + i] * (g * sum_go_xh) / S(n));
                            }
                        }
                    } else {
                        for (int b = 0; b < B; ++b) {
                            const size_t off = (static_cast<size_t>(b) * C + c) * HW;
                            for (int i = 0; i < HW; ++i) gx[off + i] += go[off + i] * g * iv;
                        }
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace beamtrack
