#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "beamtrack/common.hpp"
#include "beamtrack/tensor.hpp"

namespace beamtrack {

struct ModelConfig {
    std::array<int, 5> cnn_channels = {8, 16, 32, 64, 64};
    int embed_dim = 64;
    int gru_hidden = 128;
    int mha_heads = 8;
    bool use_mha = true;
    int pred_hidden = 64;
    int history = 4;       // L
    int horizon = 3;       // J
    int codebook_size = 32;
    int frame_channels = 3;
    int d_h = 64;
    int d_w = 64;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;

    // conv geometry is fixed: 3x3 kernels, stride 1, pad 1, 2x2/2 pooling
    static constexpr int kKernel = 3;
    static constexpr int kPad = 1;
    static constexpr int kPool = 2;

    static ModelConfig desk() { return ModelConfig{}; }

    // sized to land near the reference complexity; not trained in CI
    static ModelConfig paper_scale() {
        ModelConfig c;
        c.cnn_channels = {16, 32, 64, 128, 256};
        c.embed_dim = 128;
        c.gru_hidden = 320;
        c.mha_heads = 8;
        c.pred_hidden = 512;
        c.history = 8;
        c.horizon = 6;
        c.codebook_size = 32;
        return c;
    }

    void validate() const {
        for (int ch : cnn_channels)
            if (ch < 1) throw config_error("ModelConfig: cnn_channels must be positive");
        if (embed_dim < 1 || gru_hidden < 1 || pred_hidden < 1)
            throw config_error("ModelConfig: layer widths must be positive");
        if (mha_heads < 1) throw config_error("ModelConfig: mha_heads must be >= 1");
        if (gru_hidden % mha_heads != 0)
            throw config_error("ModelConfig: gru_hidden must be divisible by mha_heads");
        if (history < 0 || horizon < 0) throw config_error("ModelConfig: history and horizon must be >= 0");
        if (codebook_size < 1) throw config_error("ModelConfig: codebook_size must be >= 1");
        if (frame_channels < 1 || d_h < 1 || d_w < 1) throw config_error("ModelConfig: bad frame dims");
        if (!(bn_eps > 0)) throw config_error("ModelConfig: bn_eps must be > 0");
    }
};

template <class S>
struct NamedTensor {
    std::string name;
    TensorT<S> t;
};

template <class S>
struct Linear {
    TensorT<S> w;  // [in×out]
    TensorT<S> b;  // [out]

    Linear() = default;
    Linear(int in, int out) : w({in, out}, true), b({out}, true) {}

    TensorT<S> forward(Tape<S>& tape, const TensorT<S>& x) const {
        return add_rowbias(tape, matmul(tape, x, w), b);
    }
};

template <class S>
struct ConvBn {
    TensorT<S> kernel;  // [co×ci×3×3], bias-free (batchnorm follows)
    TensorT<S> gamma, beta;
    BnState<S> bn;

    ConvBn() = default;
    ConvBn(int ci, int co)
        : kernel({co, ci, ModelConfig::kKernel, ModelConfig::kKernel}, true),
          gamma({co}, true),
          beta({co}, true) {}
};

// r = sigmoid(x W_r + h U_r + b_r)
// u = sigmoid(x W_z + h U_z + b_z)
// hcand = tanh(x W_h + (r o h) U_h + b_h)
// h' = (1-u) o h + u o hcand
template <class S>
struct GruCell {
    TensorT<S> w_r, u_r, b_r;
    TensorT<S> w_z, u_z, b_z;
    TensorT<S> w_h, u_h, b_h;

    GruCell() = default;
    GruCell(int in, int hidden)
        : w_r({in, hidden}, true),
          u_r({hidden, hidden}, true),
          b_r({hidden}, true),
          w_z({in, hidden}, true),
          u_z({hidden, hidden}, true),
          b_z({hidden}, true),
          w_h({in, hidden}, true),
          u_h({hidden, hidden}, true),
          b_h({hidden}, true) {}

    TensorT<S> step(Tape<S>& tape, const TensorT<S>& x, const TensorT<S>& h_prev) const {
        auto r = sigmoid(tape, add_rowbias(tape, add(tape, matmul(tape, x, w_r), matmul(tape, h_prev, u_r)), b_r));
        auto u = sigmoid(tape, add_rowbias(tape, add(tape, matmul(tape, x, w_z), matmul(tape, h_prev, u_z)), b_z));
        auto gated = mul(tape, r, h_prev);
        auto hcand = tanh(tape, add_rowbias(tape, add(tape, matmul(tape, x, w_h), matmul(tape, gated, u_h)), b_h));
        auto keep = affine(tape, u, S(-1), S(1));  // 1 - u
        return add(tape, mul(tape, keep, h_prev), mul(tape, u, hcand));
    }
};

template <class S>
struct MhaBlock {
    std::vector<TensorT<S>> wq, wk, wv;  // per head [hidden×d_head]
    TensorT<S> wo;                       // [hidden×hidden]

    MhaBlock() = default;
    MhaBlock(int hidden, int heads) {
        int d_head = hidden / heads;
        for (int h = 0; h < heads; ++h) {
            wq.emplace_back(std::vector<int>{hidden, d_head}, true);
            wk.emplace_back(std::vector<int>{hidden, d_head}, true);
            wv.emplace_back(std::vector<int>{hidden, d_head}, true);
        }
        wo = TensorT<S>({hidden, hidden}, true);
    }
};

template <class S>
struct LogitsBlock {
    TensorT<S> logits;  // [(J+1)×C]
    TensorT<S> probs;   // softmax of each row
};

// CNN embedding -> GRU encoder -> residual multi-head self-attention ->
// joint prediction heads for the current and J future slots.
template <class S>
class Model {
   public:
    explicit Model(ModelConfig config) : cfg_(config) {
        cfg_.validate();
        int ci = cfg_.frame_channels;
        for (int l = 0; l < 5; ++l) {
            conv_[l] = ConvBn<S>(ci, cfg_.cnn_channels[static_cast<size_t>(l)]);
            ci = cfg_.cnn_channels[static_cast<size_t>(l)];
        }
        embed_ = Linear<S>(cfg_.cnn_channels[4], cfg_.embed_dim);
        gru_ = GruCell<S>(cfg_.embed_dim, cfg_.gru_hidden);
        if (cfg_.use_mha) mha_ = MhaBlock<S>(cfg_.gru_hidden, cfg_.mha_heads);
        int fuse_dim = 2 * cfg_.gru_hidden + cfg_.embed_dim;
        pred_shared_ = Linear<S>(fuse_dim, cfg_.pred_hidden);
        for (int j = 0; j <= cfg_.horizon; ++j) pred_heads_.emplace_back(cfg_.pred_hidden, cfg_.codebook_size);
    }

    const ModelConfig& config() const { return cfg_; }

    // uniform(-a, a) with a = 1/sqrt(fan_in); biases zero, bn gamma one
    void init_params(uint64_t seed) {
        Rng rng(seed);
        for (auto& p : params()) {
            auto& v = p.t.v();
            if (p.name.ends_with(".b") || p.name.ends_with("beta") || p.name.starts_with("gru.b")) {
                std::fill(v.begin(), v.end(), S(0));
            } else if (p.name.ends_with("gamma")) {
                std::fill(v.begin(), v.end(), S(1));
            } else {
                int fan_in = weight_fan_in(p.t);
                double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
                for (auto& x : v) x = static_cast<S>(rng.uniform(-a, a));
            }
        }
        for (auto& l : conv_) l.bn = BnState<S>{};
    }

    // five conv/bn/relu/pool stages, global average pool, linear embedding.
    // Pooling is skipped once a spatial dim falls below the window so small
    // probe frames still pass through all five stages.
    // frames: [B×c×h×w] (or [c×h×w] for a single frame); returns [B×embed]
    TensorT<S> cnn_embed(Tape<S>& tape, const TensorT<S>& frames, BnMode mode) {
        TensorT<S> x = frames;
        if (x.rank() == 3) x = reshape(tape, x, {1, x.dim(0), x.dim(1), x.dim(2)});
        if (x.rank() != 4 || x.dim(1) != cfg_.frame_channels)
            throw std::invalid_argument("cnn_embed: expected [B×" + std::to_string(cfg_.frame_channels) +
                                        "×h×w], got " + shape_str(frames.shape()));
        for (int l = 0; l < 5; ++l) {
            x = conv2d(tape, x, conv_[l].kernel, 1, ModelConfig::kPad);
            x = batchnorm2d(tape, x, conv_[l].gamma, conv_[l].beta, mode, conv_[l].bn, S(cfg_.bn_eps),
                            S(cfg_.bn_momentum));
            x = relu(tape, x);
            if (x.dim(2) >= ModelConfig::kPool && x.dim(3) >= ModelConfig::kPool)
                x = maxpool2d(tape, x, ModelConfig::kPool, ModelConfig::kPool);
        }
        return embed_.forward(tape, global_avg_pool(tape, x));
    }

    TensorT<S> gru_step(Tape<S>& tape, const TensorT<S>& x, const TensorT<S>& h_prev) const {
        return gru_.step(tape, x, h_prev);
    }

    // runs the GRU over feature rows from h0 = 0; returns the stacked hidden
    // states [(L+1)×hidden] and the final state [1×hidden]
    std::pair<TensorT<S>, TensorT<S>> encode_sequence(Tape<S>& tape, const TensorT<S>& features) const {
        if (features.rank() != 2 || features.cols() != cfg_.embed_dim)
            throw std::invalid_argument("encode_sequence: expected [n×embed], got " + shape_str(features.shape()));
        int n = features.rows();
        TensorT<S> h({1, cfg_.gru_hidden});
        std::vector<TensorT<S>> states;
        states.reserve(static_cast<size_t>(n));
        for (int t = 0; t < n; ++t) {
            h = gru_.step(tape, slice_rows(tape, features, t, t + 1), h);
            states.push_back(h);
        }
        return {concat_rows(tape, states), h};
    }

    // scaled dot-product self-attention per head with a residual connection
    TensorT<S> mha_residual(Tape<S>& tape, const TensorT<S>& hidden) const {
        if (!cfg_.use_mha) return hidden;
        if (hidden.rank() != 2 || hidden.cols() != cfg_.gru_hidden)
            throw std::invalid_argument("mha_residual: expected [n×hidden], got " + shape_str(hidden.shape()));
        int d_head = cfg_.gru_hidden / cfg_.mha_heads;
        S scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(d_head)));
        std::vector<TensorT<S>> head_outs;
        head_outs.reserve(static_cast<size_t>(cfg_.mha_heads));
        for (int h = 0; h < cfg_.mha_heads; ++h) {
            auto q = matmul(tape, hidden, mha_.wq[static_cast<size_t>(h)]);
            auto k = matmul(tape, hidden, mha_.wk[static_cast<size_t>(h)]);
            auto v = matmul(tape, hidden, mha_.wv[static_cast<size_t>(h)]);
            auto attn = softmax(tape, affine(tape, matmul_nt(tape, q, k), scale, S(0)));
            head_outs.push_back(matmul(tape, attn, v));
        }
        auto proj = matmul(tape, concat_cols(tape, head_outs), mha_.wo);
        return add(tape, hidden, proj);
    }

    // fuse = [mean-pooled attended | context | current feature] -> shared relu
    // layer -> one linear head per predicted slot
    LogitsBlock<S> predict_logits(Tape<S>& tape, const TensorT<S>& attended, const TensorT<S>& context,
                                  const TensorT<S>& current_feature) const {
        auto pooled = mean_rows(tape, attended);
        auto fuse = concat_cols(tape, std::vector<TensorT<S>>{pooled, context, current_feature});
        auto hid = relu(tape, pred_shared_.forward(tape, fuse));
        std::vector<TensorT<S>> rows;
        rows.reserve(pred_heads_.size());
        for (const auto& head : pred_heads_) rows.push_back(head.forward(tape, hid));
        LogitsBlock<S> block;
        block.logits = concat_rows(tape, rows);
        block.probs = softmax(tape, block.logits);
        return block;
    }

    // frames: [(L+1)×c×h×w] preprocessed sample
    LogitsBlock<S> forward(Tape<S>& tape, const TensorT<S>& frames, BnMode mode) {
        if (frames.rank() != 4 || frames.dim(0) != cfg_.history + 1)
            throw std::invalid_argument("forward: expected [(L+1)×c×h×w], got " + shape_str(frames.shape()));
        return forward_batch(tape, frames, 1, mode)[0];
    }

    // Batched forward: frames of `batch` samples stacked sample-major into
    // [batch·(L+1)×c×h×w]. Train-mode batchnorm statistics then span the whole
    // minibatch; with batch = 1 this is identical to the per-sample forward.
    std::vector<LogitsBlock<S>> forward_batch(Tape<S>& tape, const TensorT<S>& frames, int batch, BnMode mode) {
        const int steps = cfg_.history + 1;
        if (batch < 1 || frames.rank() != 4 || frames.dim(0) != batch * steps)
            throw std::invalid_argument("forward_batch: expected [batch·(L+1)×c×h×w], got " +
                                        shape_str(frames.shape()));
        auto features = cnn_embed(tape, frames, mode);  // [batch·steps × embed]

        std::vector<TensorT<S>> step_feats;
        step_feats.reserve(static_cast<size_t>(steps));
        for (int t = 0; t < steps; ++t) {
            std::vector<int> rows(static_cast<size_t>(batch));
            for (int b = 0; b < batch; ++b) rows[static_cast<size_t>(b)] = b * steps + t;
            step_feats.push_back(gather_rows(tape, features, std::move(rows)));  // [batch × embed]
        }

        TensorT<S> h({batch, cfg_.gru_hidden});
        std::vector<TensorT<S>> states;
        states.reserve(static_cast<size_t>(steps));
        for (int t = 0; t < steps; ++t) {
            h = gru_.step(tape, step_feats[static_cast<size_t>(t)], h);
            states.push_back(h);
        }
        auto context = h;                                             // [batch × hidden]
        auto current = step_feats[static_cast<size_t>(steps - 1)];    // [batch × embed]

        std::vector<TensorT<S>> pooled_rows;
        pooled_rows.reserve(static_cast<size_t>(batch));
        for (int b = 0; b < batch; ++b) {
            std::vector<TensorT<S>> rows;
            rows.reserve(static_cast<size_t>(steps));
            for (int t = 0; t < steps; ++t) rows.push_back(slice_rows(tape, states[static_cast<size_t>(t)], b, b + 1));
            auto attended = mha_residual(tape, concat_rows(tape, rows));
            pooled_rows.push_back(mean_rows(tape, attended));
        }
        auto pooled = concat_rows(tape, pooled_rows);  // [batch × hidden]

        auto fuse = concat_cols(tape, std::vector<TensorT<S>>{pooled, context, current});
        auto hid = relu(tape, pred_shared_.forward(tape, fuse));
        std::vector<TensorT<S>> head_rows;  // one [batch × C] per predicted slot
        head_rows.reserve(pred_heads_.size());
        for (const auto& head : pred_heads_) head_rows.push_back(head.forward(tape, hid));

        std::vector<LogitsBlock<S>> blocks(static_cast<size_t>(batch));
        for (int b = 0; b < batch; ++b) {
            std::vector<TensorT<S>> rows;
            rows.reserve(head_rows.size());
            for (const auto& hr : head_rows) rows.push_back(slice_rows(tape, hr, b, b + 1));
            blocks[static_cast<size_t>(b)].logits = concat_rows(tape, rows);
            blocks[static_cast<size_t>(b)].probs = softmax(tape, blocks[static_cast<size_t>(b)].logits);
        }
        return blocks;
    }

    // argmax per slot, ties to the lowest index; 1-based
    static std::vector<int> predict_beams(const LogitsBlock<S>& block) {
        const auto& p = block.probs;
        std::vector<int> out;
        out.reserve(static_cast<size_t>(p.rows()));
        for (int i = 0; i < p.rows(); ++i) {
            int best = 0;
            for (int j = 1; j < p.cols(); ++j)
                if (p.at(i, j) > p.at(i, best)) best = j;
            out.push_back(best + 1);
        }
        return out;
    }

    std::vector<NamedTensor<S>> params() {
        std::vector<NamedTensor<S>> out;
        for (int l = 0; l < 5; ++l) {
            std::string p = "cnn.conv" + std::to_string(l + 1);
            out.push_back({p + ".kernel", conv_[l].kernel});
            out.push_back({p + ".gamma", conv_[l].gamma});
            out.push_back({p + ".beta", conv_[l].beta});
        }
        out.push_back({"cnn.embed.w", embed_.w});
        out.push_back({"cnn.embed.b", embed_.b});
        const char* gate_names[] = {"r", "z", "h"};
        const TensorT<S>* gates[3][3] = {{&gru_.w_r, &gru_.u_r, &gru_.b_r},
                                         {&gru_.w_z, &gru_.u_z, &gru_.b_z},
                                         {&gru_.w_h, &gru_.u_h, &gru_.b_h}};
        for (int g = 0; g < 3; ++g) {
            out.push_back({std::string("gru.w_") + gate_names[g], *gates[g][0]});
            out.push_back({std::string("gru.u_") + gate_names[g], *gates[g][1]});
            out.push_back({std::string("gru.b_") + gate_names[g], *gates[g][2]});
        }
        if (cfg_.use_mha) {
            for (int h = 0; h < cfg_.mha_heads; ++h) {
                std::string p = "mha.head" + std::to_string(h);
                out.push_back({p + ".wq", mha_.wq[static_cast<size_t>(h)]});
                out.push_back({p + ".wk", mha_.wk[static_cast<size_t>(h)]});
                out.push_back({p + ".wv", mha_.wv[static_cast<size_t>(h)]});
            }
            out.push_back({"mha.out.w", mha_.wo});
        }
        out.push_back({"pred.shared.w", pred_shared_.w});
        out.push_back({"pred.shared.b", pred_shared_.b});
        for (size_t j = 0; j < pred_heads_.size(); ++j) {
            std::string p = "pred.head" + std::to_string(j);
            out.push_back({p + ".w", pred_heads_[j].w});
            out.push_back({p + ".b", pred_heads_[j].b});
        }
        return out;
    }

    size_t count_params() {
        size_t n = 0;
        for (const auto& p : params()) n += p.t.numel();
        return n;
    }

    BnState<S>& bn_state(int layer) { return conv_[layer].bn; }

    void zero_grad() {
        for (auto& p : params()) p.t.zero_grad();
    }

    // full mutable state (for best-model snapshots)
    struct State {
        std::vector<std::vector<S>> values;
        std::vector<BnState<S>> bn;
    };

    State state() {
        State s;
        for (auto& p : params()) s.values.push_back(p.t.v());
        for (auto& l : conv_) s.bn.push_back(l.bn);
        return s;
    }

    void set_state(const State& s) {
        auto ps = params();
        if (s.values.size() != ps.size() || s.bn.size() != 5) throw std::invalid_argument("set_state: bad state");
        for (size_t i = 0; i < ps.size(); ++i) {
            if (s.values[i].size() != ps[i].t.numel()) throw std::invalid_argument("set_state: size mismatch");
            ps[i].t.v() = s.values[i];
        }
        for (int l = 0; l < 5; ++l) conv_[l].bn = s.bn[static_cast<size_t>(l)];
    }

   private:
    static int weight_fan_in(const TensorT<S>& t) {
        if (t.rank() == 4) return t.dim(1) * t.dim(2) * t.dim(3);
        if (t.rank() == 2) return t.dim(0);
        return static_cast<int>(t.numel());
    }

    ModelConfig cfg_;
    std::array<ConvBn<S>, 5> conv_;
    Linear<S> embed_;
    GruCell<S> gru_;
    MhaBlock<S> mha_;
    Linear<S> pred_shared_;
    std::vector<Linear<S>> pred_heads_;
};

// ---- BTMD checkpoint ----
// magic "BTMD", version u32, length-prefixed key=value config block, tensor
// count u32, then per tensor: name length/name/rank/dims (u32) and f64 data.
// Learnable parameters come first, then batchnorm running statistics; order
// is the canonical registry order.

inline constexpr uint32_t kBtmdVersion = 1;

namespace detail {

inline std::string model_config_text(const ModelConfig& c) {
    std::ostringstream os;
    os << "cnn_channels=";
    for (int i = 0; i < 5; ++i) os << (i ? "," : "") << c.cnn_channels[static_cast<size_t>(i)];
    os << "\n";
    os << "embed_dim=" << c.embed_dim << "\n";
    os << "gru_hidden=" << c.gru_hidden << "\n";
    os << "mha_heads=" << c.mha_heads << "\n";
    os << "use_mha=" << (c.use_mha ? 1 : 0) << "\n";
    os << "pred_hidden=" << c.pred_hidden << "\n";
    os << "history=" << c.history << "\n";
    os << "horizon=" << c.horizon << "\n";
    os << "codebook_size=" << c.codebook_size << "\n";
    os << "frame_channels=" << c.frame_channels << "\n";
    os << "d_h=" << c.d_h << "\n";
    os << "d_w=" << c.d_w << "\n";
    return os.str();
}

inline ModelConfig parse_model_config_text(const std::string& text) {
    ModelConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "cnn_channels") {
            std::istringstream vs(val);
            std::string tok;
            for (int i = 0; i < 5 && std::getline(vs, tok, ','); ++i)
                c.cnn_channels[static_cast<size_t>(i)] = std::stoi(tok);
        } else if (key == "embed_dim") c.embed_dim = std::stoi(val);
        else if (key == "gru_hidden") c.gru_hidden = std::stoi(val);
        else if (key == "mha_heads") c.mha_heads = std::stoi(val);
        else if (key == "use_mha") c.use_mha = std::stoi(val) != 0;
        else if (key == "pred_hidden") c.pred_hidden = std::stoi(val);
        else if (key == "history") c.history = std::stoi(val);
        else if (key == "horizon") c.horizon = std::stoi(val);
        else if (key == "codebook_size") c.codebook_size = std::stoi(val);
        else if (key == "frame_channels") c.frame_channels = std::stoi(val);
        else if (key == "d_h") c.d_h = std::stoi(val);
        else if (key == "d_w") c.d_w = std::stoi(val);
        else throw format_error("unknown checkpoint config key: " + key);
    }
    return c;
}

template <class S>
std::vector<NamedTensor<S>> checkpoint_tensors(Model<S>& model) {
    std::vector<NamedTensor<S>> all = model.params();
    for (int l = 0; l < 5; ++l) {
        auto& bn = model.bn_state(l);
        std::string p = "cnn.bn" + std::to_string(l + 1);
        if (bn.running_mean.empty()) {
            bn.running_mean.assign(static_cast<size_t>(model.config().cnn_channels[static_cast<size_t>(l)]), S(0));
            bn.running_var.assign(static_cast<size_t>(model.config().cnn_channels[static_cast<size_t>(l)]), S(0));
        }
        all.push_back({p + ".running_mean",
                       TensorT<S>::from({static_cast<int>(bn.running_mean.size())}, bn.running_mean)});
        all.push_back({p + ".running_var",
                       TensorT<S>::from({static_cast<int>(bn.running_var.size())}, bn.running_var)});
        all.push_back({p + ".num_batches", TensorT<S>::from({1}, {static_cast<S>(bn.num_batches)})});
    }
    return all;
}

}  // namespace detail

template <class S>
void write_btmd(Model<S>& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("cannot open " + path + " for writing");
    os.write("BTMD", 4);
    put_u32(os, kBtmdVersion);
    std::string cfg = detail::model_config_text(model.config());
    put_u32(os, static_cast<uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    auto tensors = detail::checkpoint_tensors(model);
    put_u32(os, static_cast<uint32_t>(tensors.size()));
    for (const auto& nt : tensors) {
        put_u32(os, static_cast<uint32_t>(nt.name.size()));
        os.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
        put_u32(os, static_cast<uint32_t>(nt.t.rank()));
        for (int d = 0; d < nt.t.rank(); ++d) put_u32(os, static_cast<uint32_t>(nt.t.dim(d)));
        for (S x : nt.t.v()) put_f64(os, static_cast<double>(x));
    }
    if (!os) throw io_error("write failed for " + path);
}

template <class S>
Model<S> read_btmd(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "BTMD") throw format_error(path + ": not a BTMD checkpoint");
    if (get_u32(is) != kBtmdVersion) throw format_error(path + ": unsupported BTMD version");
    uint32_t cfg_len = get_u32(is);
    std::string cfg_text(cfg_len, '\0');
    is.read(cfg_text.data(), cfg_len);
    if (!is) throw format_error(path + ": truncated checkpoint");
    ModelConfig cfg = detail::parse_model_config_text(cfg_text);

    Model<S> model(cfg);
    auto expected = detail::checkpoint_tensors(model);
    uint32_t count = get_u32(is);
    if (count != expected.size()) throw format_error(path + ": unexpected tensor count");
    for (auto& nt : expected) {
        uint32_t name_len = get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is || name != nt.name) throw format_error(path + ": tensor order mismatch at " + nt.name);
        uint32_t rank = get_u32(is);
        if (rank != static_cast<uint32_t>(nt.t.rank())) throw format_error(path + ": rank mismatch at " + name);
        size_t numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            uint32_t dim = get_u32(is);
            if (dim != static_cast<uint32_t>(nt.t.dim(static_cast<int>(d))))
                throw format_error(path + ": shape mismatch at " + name);
            numel *= dim;
        }
        for (size_t i = 0; i < numel; ++i) nt.t.v()[i] = static_cast<S>(get_f64(is));
    }

    // copy buffer tensors back into the batchnorm states
    size_t idx = expected.size() - 15;  // 5 layers × 3 buffers
    for (int l = 0; l < 5; ++l) {
        auto& bn = model.bn_state(l);
        bn.running_mean = expected[idx++].t.v();
        bn.running_var = expected[idx++].t.v();
        bn.num_batches = static_cast<int64_t>(expected[idx++].t.v()[0]);
    }
    return model;
}

}  // namespace beamtrack
