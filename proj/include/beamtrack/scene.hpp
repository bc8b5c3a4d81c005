#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "beamtrack/channel.hpp"
#include "beamtrack/common.hpp"

namespace beamtrack {

enum class BackgroundMode { Static, Textured };

struct SceneConfig {
    int d_h = 64;
    int d_w = 64;
    double field_of_view = 1.0471975511965976;  // 60 degrees
    int ue_size = 8;                            // UE square side in pixels at range 1
    BackgroundMode background_mode = BackgroundMode::Static;
    int distractor_count = 0;
    double noise_std = 0.0;  // pixel-intensity units
    int frames_total = 2000;

    // trajectory shaping; speeds in pixels per slot keep the walk visible at
    // any resolution, dwell_bias concentrates time near the field-of-view
    // edges which skews the beam-label histogram
    double speed_min_px = 1.05;
    double speed_max_px = 2.0;
    double dwell_bias = 0.7;
    double r_min = 1.0;
    double r_max = 2.0;

    void validate() const {
        if (d_h < 16 || d_w < 16) throw config_error("SceneConfig: d_h and d_w must be >= 16");
        if (!(field_of_view > 0) || field_of_view >= M_PI)
            throw config_error("SceneConfig: field_of_view must be in (0, pi)");
        if (ue_size < 1) throw config_error("SceneConfig: ue_size must be >= 1");
        if (distractor_count < 0) throw config_error("SceneConfig: distractor_count must be >= 0");
        if (noise_std < 0) throw config_error("SceneConfig: noise_std must be >= 0");
        if (frames_total < 1) throw config_error("SceneConfig: frames_total must be >= 1");
        if (speed_min_px < 0 || speed_max_px < speed_min_px)
            throw config_error("SceneConfig: need 0 <= speed_min_px <= speed_max_px");
        if (!(dwell_bias >= 0 && dwell_bias <= 1)) throw config_error("SceneConfig: dwell_bias must be in [0,1]");
        if (!(r_min > 0) || r_max < r_min) throw config_error("SceneConfig: need 0 < r_min <= r_max");
    }
};

struct Trajectory {
    std::vector<double> theta;
    std::vector<double> range;
};

struct MultipathConfig {
    int nlos_count = 0;
    double nlos_rel_power = 0.1;  // power of each NLoS path relative to LoS
};

namespace detail {
inline double hash01(uint64_t seed, uint64_t stream) {
    return static_cast<double>(Rng::mix(seed, stream) >> 11) * 0x1.0p-53;
}
}  // namespace detail

// The UE alternates between cruising across the field of view and dwelling
// near an edge, where it oscillates inside a small box for a seeded duration
// proportional to dwell_bias. It never moves less than speed_min_px per slot,
// so adjacent frames always differ; the dwell phases skew time (and therefore
// beam labels) toward the edges.
inline Trajectory simulate_trajectory(const SceneConfig& config, uint64_t seed) {
    config.validate();
    Rng rng(seed);
    const double theta_max = 0.98 * config.field_of_view / 2.0;
    const double px = config.field_of_view / config.d_w;
    const double v_lo = config.speed_min_px * px;
    const double v_hi = config.speed_max_px * px;
    const double dwell_trigger = theta_max - 3.0 * px;
    const double dwell_box = 2.0 * px;

    Trajectory traj;
    traj.theta.reserve(static_cast<size_t>(config.frames_total));
    traj.range.reserve(static_cast<size_t>(config.frames_total));

    double theta = rng.uniform(-theta_max / 2.0, theta_max / 2.0);
    double r = rng.uniform(config.r_min, config.r_max);
    double dir = rng.uniform() < 0.5 ? -1.0 : 1.0;
    double v = rng.uniform(v_lo, v_hi);
    int dwell_left = 0;
    double dwell_center = 0.0;

    for (int t = 0; t < config.frames_total; ++t) {
        traj.theta.push_back(theta);
        traj.range.push_back(r);

        if (dwell_left > 0) {
            --dwell_left;
            if (rng.uniform() < 0.45) dir = -dir;
            double next = theta + dir * v_lo;
            if (std::abs(next - dwell_center) > dwell_box || std::abs(next) > theta_max) {
                dir = -dir;
                next = theta + dir * v_lo;
            }
            theta = std::min(theta_max, std::max(-theta_max, next));
        } else {
            v += 0.25 * (v_hi - v_lo) * (2.0 * rng.uniform() - 1.0);
            v = std::min(v_hi, std::max(v_lo, v));
            double next = theta + dir * v;
            if (std::abs(next) > theta_max) {
                dir = -dir;
                next = theta + dir * v;
            }
            theta = std::min(theta_max, std::max(-theta_max, next));
            if (std::abs(theta) >= dwell_trigger && config.dwell_bias > 0) {
                dwell_left = static_cast<int>(config.dwell_bias * (40.0 + 60.0 * rng.uniform()));
                dwell_center = theta;
                dir = -dir;  // leave inward when the dwell ends
            }
        }

        r += 0.03 * (config.r_max - config.r_min) * (2.0 * rng.uniform() - 1.0);
        r = std::min(config.r_max, std::max(config.r_min, r));
    }
    return traj;
}

namespace detail {
inline void draw_rect(Image& img, int cx, int cy, int half, float cr, float cg, float cb) {
    int x0 = std::max(0, cx - half), x1 = std::min(img.width - 1, cx + half);
    int y0 = std::max(0, cy - half), y1 = std::min(img.height - 1, cy + half);
    const float col[3] = {cr, cg, cb};
    for (int c = 0; c < 3; ++c)
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) img.at(c, y, x) = col[c];
}
}  // namespace detail

// The UE is a bright square centered at column u = round((theta/fov + 0.5)*d_w)
// whose side scales with 1/r. Distractor and texture layout derive from the
// config alone, so they are identical in every frame; the seed only drives
// pixel noise.
inline Image render_frame(double theta, double r, const SceneConfig& config, uint64_t seed) {
    config.validate();
    if (std::abs(theta) >= config.field_of_view / 2.0)
        throw std::domain_error("render_frame: theta outside field of view");
    if (!(r > 0)) throw std::domain_error("render_frame: range must be > 0");

    Image img(3, config.d_h, config.d_w);

    if (config.background_mode == BackgroundMode::Static) {
        std::fill(img.v.begin(), img.v.end(), 0.1f);
    } else {
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < config.d_h; ++y)
                for (int x = 0; x < config.d_w; ++x) {
                    uint64_t cell = (static_cast<uint64_t>(c) << 40) | (static_cast<uint64_t>(y) << 20) |
                                    static_cast<uint64_t>(x);
                    img.at(c, y, x) = static_cast<float>(0.05 + 0.25 * detail::hash01(0x7e57ab1e, cell));
                }
    }

    for (int i = 0; i < config.distractor_count; ++i) {
        uint64_t hx = Rng::mix(0xd151, static_cast<uint64_t>(i) * 4 + 0);
        uint64_t hy = Rng::mix(0xd151, static_cast<uint64_t>(i) * 4 + 1);
        uint64_t hs = Rng::mix(0xd151, static_cast<uint64_t>(i) * 4 + 2);
        int cx = static_cast<int>(hx % static_cast<uint64_t>(config.d_w));
        int cy = static_cast<int>(hy % static_cast<uint64_t>(config.d_h));
        int half = 2 + static_cast<int>(hs % 4);
        detail::draw_rect(img, cx, cy, half, 0.45f, 0.45f, 0.45f);
    }

    int u = static_cast<int>(std::llround((theta / config.field_of_view + 0.5) * config.d_w));
    u = std::min(config.d_w - 1, std::max(0, u));
    int side = std::max(1, static_cast<int>(std::llround(config.ue_size / r)));
    detail::draw_rect(img, u, config.d_h / 2, side / 2, 1.0f, 0.85f, 0.35f);

    if (config.noise_std > 0) {
        Rng rng(seed);
        for (auto& p : img.v) {
            p += static_cast<float>(config.noise_std * rng.normal());
            p = std::min(1.0f, std::max(0.0f, p));
        }
    }
    return img;
}

// h = (1/r) a(theta) plus optional static NLoS paths. NLoS geometry derives
// deterministically from the path index so stored (theta, r) pairs always
// regenerate the same channel.
inline ComplexVec position_to_channel(double theta, double r, const ULAConfig& ula,
                                      const MultipathConfig& mp = {}) {
    if (!(r > 0)) throw std::domain_error("position_to_channel: range must be > 0");
    ComplexVec h = cscale(steering_vector(theta, ula), 1.0 / r);
    for (int i = 0; i < mp.nlos_count; ++i) {
        double off = (detail::hash01(0x5ca77e12, static_cast<uint64_t>(i) * 3 + 0) - 0.5) * 0.8;
        double nlos_theta = std::max(-1.4, std::min(1.4, theta + off));
        double amp = std::sqrt(mp.nlos_rel_power) / r *
                     (0.5 + 0.5 * detail::hash01(0x5ca77e12, static_cast<uint64_t>(i) * 3 + 1));
        double phase = 2.0 * M_PI * detail::hash01(0x5ca77e12, static_cast<uint64_t>(i) * 3 + 2);
        ComplexVec a = steering_vector(nlos_theta, ula);
        for (size_t n = 0; n < h.size(); ++n) {
            double re = a.re[n], im = a.im[n];
            h.re[n] += amp * (re * std::cos(phase) - im * std::sin(phase));
            h.im[n] += amp * (re * std::sin(phase) + im * std::cos(phase));
        }
    }
    return h;
}

// Frame/label/geometry streams plus the contiguous train/validation split.
// A sample at timestamp t uses frames [t-L, t] and labels [t, t+J]; valid
// timestamps are [L, T-J-1].
struct Dataset {
    uint32_t frames_total = 0;  // T
    uint32_t history = 0;       // L
    uint32_t horizon = 0;       // J
    uint32_t codebook_size = 0;
    uint32_t channels = 3;
    uint32_t d_h = 0;
    uint32_t d_w = 0;

    std::vector<float> frames;      // T * channels * d_h * d_w
    std::vector<uint32_t> labels;   // T, 1-based beam indices
    std::vector<double> theta;      // T
    std::vector<double> range;      // T

    std::vector<uint32_t> train_ts;
    std::vector<uint32_t> val_ts;

    size_t frame_elems() const { return static_cast<size_t>(channels) * d_h * d_w; }
    uint32_t valid_samples() const { return frames_total - history - horizon; }

    Image frame(uint32_t t) const {
        Image img(static_cast<int>(channels), static_cast<int>(d_h), static_cast<int>(d_w));
        std::copy(frames.begin() + static_cast<size_t>(t) * frame_elems(),
                  frames.begin() + static_cast<size_t>(t + 1) * frame_elems(), img.v.begin());
        return img;
    }

    // frames [t-L, t] for the sample at timestamp t
    std::vector<Image> window_frames(uint32_t t) const {
        std::vector<Image> out;
        out.reserve(history + 1);
        for (uint32_t i = t - history; i <= t; ++i) out.push_back(frame(i));
        return out;
    }

    // 1-based beam labels for slots [t, t+J]
    std::vector<int> window_labels(uint32_t t) const {
        std::vector<int> out;
        out.reserve(horizon + 1);
        for (uint32_t i = t; i <= t + horizon; ++i) out.push_back(static_cast<int>(labels[i]));
        return out;
    }

    // earliest fraction of valid timestamps goes to training
    void assign_split(double split_ratio) {
        if (!(split_ratio > 0 && split_ratio < 1)) throw config_error("split_ratio must be in (0,1)");
        train_ts.clear();
        val_ts.clear();
        uint32_t n = valid_samples();
        uint32_t n_train = static_cast<uint32_t>(split_ratio * n);
        for (uint32_t i = 0; i < n; ++i) {
            uint32_t t = history + i;
            (i < n_train ? train_ts : val_ts).push_back(t);
        }
    }
};

inline Dataset build_dataset(const SceneConfig& scene, const ULAConfig& ula, const Codebook& codebook, int history,
                             int horizon, double split_ratio, uint64_t seed, const MultipathConfig& mp = {},
                             int threads = 1) {
    scene.validate();
    if (history < 0 || horizon < 0) throw config_error("build_dataset: history and horizon must be >= 0");
    if (scene.frames_total < history + horizon + 1)
        throw config_error("build_dataset: frames_total must be >= history + horizon + 1");

    Dataset ds;
    ds.frames_total = static_cast<uint32_t>(scene.frames_total);
    ds.history = static_cast<uint32_t>(history);
    ds.horizon = static_cast<uint32_t>(horizon);
    ds.codebook_size = static_cast<uint32_t>(codebook.size());
    ds.d_h = static_cast<uint32_t>(scene.d_h);
    ds.d_w = static_cast<uint32_t>(scene.d_w);

    Trajectory traj = simulate_trajectory(scene, seed);
    ds.theta = traj.theta;
    ds.range = traj.range;

    ds.frames.assign(static_cast<size_t>(ds.frames_total) * ds.frame_elems(), 0.0f);
    parallel_for(ds.frames_total, threads, [&](size_t t) {
        Image img = render_frame(traj.theta[t], traj.range[t], scene, Rng::mix(seed, t));
        std::copy(img.v.begin(), img.v.end(), ds.frames.begin() + t * ds.frame_elems());
    });

    std::vector<ComplexVec> h_seq(ds.frames_total);
    for (uint32_t t = 0; t < ds.frames_total; ++t)
        h_seq[t] = position_to_channel(traj.theta[t], traj.range[t], ula, mp);
    std::vector<int> labels = oracle_beams(h_seq, codebook);
    ds.labels.assign(labels.begin(), labels.end());

    ds.assign_split(split_ratio);
    return ds;
}

// ---- BTDS dataset file ----
// magic "BTDS", version u32, then T, L, J, C, channels, d_h, d_w as u32,
// then frames f32, labels u32, (theta, range) f64 pairs; all little-endian.

inline constexpr uint32_t kBtdsVersion = 1;

inline std::vector<std::pair<std::string, std::string>> btds_header_fields(const Dataset& ds) {
    return {{"format", "BTDS"},
            {"version", std::to_string(kBtdsVersion)},
            {"frames_total", std::to_string(ds.frames_total)},
            {"history", std::to_string(ds.history)},
            {"horizon", std::to_string(ds.horizon)},
            {"codebook_size", std::to_string(ds.codebook_size)},
            {"channels", std::to_string(ds.channels)},
            {"d_h", std::to_string(ds.d_h)},
            {"d_w", std::to_string(ds.d_w)}};
}

inline void write_btds(const Dataset& ds, const std::string& path,
                       const std::vector<std::pair<std::string, std::string>>& extra_meta = {}) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("cannot open " + path + " for writing");
    os.write("BTDS", 4);
    put_u32(os, kBtdsVersion);
    for (uint32_t x : {ds.frames_total, ds.history, ds.horizon, ds.codebook_size, ds.channels, ds.d_h, ds.d_w})
        put_u32(os, x);
    for (float f : ds.frames) put_f32(os, f);
    for (uint32_t l : ds.labels) put_u32(os, l);
    for (uint32_t t = 0; t < ds.frames_total; ++t) {
        put_f64(os, ds.theta[t]);
        put_f64(os, ds.range[t]);
    }
    if (!os) throw io_error("write failed for " + path);
    os.close();

    std::ofstream meta(path + ".meta", std::ios::trunc);
    if (!meta) throw io_error("cannot open " + path + ".meta for writing");
    for (const auto& [k, v] : btds_header_fields(ds)) meta << k << "=" << v << "\n";
    for (const auto& [k, v] : extra_meta) meta << k << "=" << v << "\n";
    if (!meta) throw io_error("write failed for " + path + ".meta");
}

inline Dataset read_btds(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "BTDS") throw format_error(path + ": not a BTDS dataset");
    uint32_t version = get_u32(is);
    if (version != kBtdsVersion) throw format_error(path + ": unsupported BTDS version");

    Dataset ds;
    ds.frames_total = get_u32(is);
    ds.history = get_u32(is);
    ds.horizon = get_u32(is);
    ds.codebook_size = get_u32(is);
    ds.channels = get_u32(is);
    ds.d_h = get_u32(is);
    ds.d_w = get_u32(is);
    if (ds.channels != 3 || ds.d_h == 0 || ds.d_w == 0 || ds.codebook_size == 0 ||
        ds.frames_total < ds.history + ds.horizon + 1)
        throw format_error(path + ": inconsistent BTDS header");

    size_t n = static_cast<size_t>(ds.frames_total) * ds.frame_elems();
    ds.frames.resize(n);
    for (auto& f : ds.frames) f = get_f32(is);
    ds.labels.resize(ds.frames_total);
    for (auto& l : ds.labels) {
        l = get_u32(is);
        if (l < 1 || l > ds.codebook_size) throw format_error(path + ": beam label out of range");
    }
    ds.theta.resize(ds.frames_total);
    ds.range.resize(ds.frames_total);
    for (uint32_t t = 0; t < ds.frames_total; ++t) {
        ds.theta[t] = get_f64(is);
        ds.range[t] = get_f64(is);
    }
    return ds;
}

}  // namespace beamtrack
