#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "beamtrack/channel.hpp"
#include "beamtrack/metrics.hpp"
#include "beamtrack/model.hpp"
#include "beamtrack/scene.hpp"
#include "beamtrack/train.hpp"

namespace beamtrack {

// Effective run settings: built-in defaults, overlaid by a key=value config
// file, overlaid by command-line flags. Unknown keys are rejected.
struct RunConfig {
    uint64_t seed = 42;
    int threads = 1;

    SceneConfig scene;
    ULAConfig ula{32, 0.5};
    int codebook_beams = 32;
    MultipathConfig multipath;

    int history = 4;   // L
    int horizon = 3;   // J
    double split_ratio = 0.8;

    ModelConfig model;
    TrainConfig train;

    double dba_delta = 5.0;
    int dba_k = 3;

    void set(const std::string& key, const std::string& value);
    void apply_file(const std::string& path);

    // model config with the data-dependent fields synced in
    ModelConfig model_for_data(uint32_t L, uint32_t J, uint32_t C, uint32_t d_h, uint32_t d_w) const {
        ModelConfig m = model;
        m.history = static_cast<int>(L);
        m.horizon = static_cast<int>(J);
        m.codebook_size = static_cast<int>(C);
        m.d_h = static_cast<int>(d_h);
        m.d_w = static_cast<int>(d_w);
        m.validate();
        return m;
    }

    void validate() const {
        scene.validate();
        ula.validate();
        if (codebook_beams < 1) throw config_error("codebook.beams must be >= 1");
        if (history < 0 || horizon < 0) throw config_error("data.history and data.horizon must be >= 0");
        if (!(split_ratio > 0 && split_ratio < 1)) throw config_error("data.split must be in (0,1)");
        if (scene.frames_total < history + horizon + 1)
            throw config_error("scene.frames must be >= data.history + data.horizon + 1");
        if (multipath.nlos_count < 0) throw config_error("channel.nlos_count must be >= 0");
        if (threads < 1) throw config_error("threads must be >= 1");
        if (!(dba_delta > 0)) throw config_error("metrics.dba_delta must be > 0");
        if (dba_k < 1) throw config_error("metrics.dba_k must be >= 1");
        train.validate();
        model_for_data(static_cast<uint32_t>(history), static_cast<uint32_t>(horizon),
                       static_cast<uint32_t>(codebook_beams), static_cast<uint32_t>(scene.d_h),
                       static_cast<uint32_t>(scene.d_w));
    }

    std::vector<std::pair<std::string, std::string>> echo() const;
};

namespace detail {

inline int to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int x = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw config_error(key + ": expected an integer, got '" + v + "'");
    }
}

inline double to_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw config_error(key + ": expected a number, got '" + v + "'");
    }
}

inline uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        uint64_t x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw config_error(key + ": expected an unsigned integer, got '" + v + "'");
    }
}

inline bool to_on_off(const std::string& key, const std::string& v) {
    if (v == "on" || v == "1" || v == "true") return true;
    if (v == "off" || v == "0" || v == "false") return false;
    throw config_error(key + ": expected on|off, got '" + v + "'");
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& value) {
    using detail::to_double;
    using detail::to_int;
    using detail::to_on_off;
    using detail::to_u64;

    if (key == "seed") seed = to_u64(key, value);
    else if (key == "threads") threads = to_int(key, value);
    else if (key == "scene.frames") scene.frames_total = to_int(key, value);
    else if (key == "scene.d_h") scene.d_h = to_int(key, value);
    else if (key == "scene.d_w") scene.d_w = to_int(key, value);
    else if (key == "scene.fov") scene.field_of_view = to_double(key, value);
    else if (key == "scene.ue_size") scene.ue_size = to_int(key, value);
    else if (key == "scene.background") {
        if (value == "static") scene.background_mode = BackgroundMode::Static;
        else if (value == "textured") scene.background_mode = BackgroundMode::Textured;
        else throw config_error("scene.background: expected static|textured, got '" + value + "'");
    } else if (key == "scene.distractors") scene.distractor_count = to_int(key, value);
    else if (key == "scene.noise_std") scene.noise_std = to_double(key, value);
    else if (key == "scene.speed_min_px") scene.speed_min_px = to_double(key, value);
    else if (key == "scene.speed_max_px") scene.speed_max_px = to_double(key, value);
    else if (key == "scene.dwell_bias") scene.dwell_bias = to_double(key, value);
    else if (key == "scene.r_min") scene.r_min = to_double(key, value);
    else if (key == "scene.r_max") scene.r_max = to_double(key, value);
    else if (key == "ula.antennas") ula.n_antennas = to_int(key, value);
    else if (key == "ula.spacing") ula.element_spacing = to_double(key, value);
    else if (key == "codebook.beams") codebook_beams = to_int(key, value);
    else if (key == "channel.nlos_count") multipath.nlos_count = to_int(key, value);
    else if (key == "channel.nlos_power") multipath.nlos_rel_power = to_double(key, value);
    else if (key == "data.history") history = to_int(key, value);
    else if (key == "data.horizon") horizon = to_int(key, value);
    else if (key == "data.split") split_ratio = to_double(key, value);
    else if (key == "model.preset") {
        if (value == "desk") {
            ModelConfig keep = ModelConfig::desk();
            keep.use_mha = model.use_mha;
            model = keep;
        } else if (value == "paper") {
            bool mha = model.use_mha;
            model = ModelConfig::paper_scale();
            model.use_mha = mha;
        } else throw config_error("model.preset: expected desk|paper, got '" + value + "'");
    } else if (key == "model.cnn_channels") {
        std::istringstream vs(value);
        std::string tok;
        std::vector<int> ch;
        while (std::getline(vs, tok, ',')) ch.push_back(to_int(key, tok));
        if (ch.size() != 5) throw config_error("model.cnn_channels: expected exactly 5 values");
        for (int i = 0; i < 5; ++i) model.cnn_channels[static_cast<size_t>(i)] = ch[static_cast<size_t>(i)];
    } else if (key == "model.embed_dim") model.embed_dim = to_int(key, value);
    else if (key == "model.gru_hidden") model.gru_hidden = to_int(key, value);
    else if (key == "model.heads") model.mha_heads = to_int(key, value);
    else if (key == "model.pred_hidden") model.pred_hidden = to_int(key, value);
    else if (key == "model.mha") model.use_mha = to_on_off(key, value);
    else if (key == "train.epochs") train.epochs = to_int(key, value);
    else if (key == "train.batch") train.batch_size = to_int(key, value);
    else if (key == "train.lr_init") train.lr_init = to_double(key, value);
    else if (key == "train.lr_min") train.lr_min = to_double(key, value);
    else if (key == "train.cycle") train.cycle_epochs = to_int(key, value);
    else if (key == "train.gamma") train.gamma = to_double(key, value);
    else if (key == "train.threshold") train.preprocess_threshold = to_double(key, value);
    else if (key == "metrics.dba_delta") dba_delta = to_double(key, value);
    else if (key == "metrics.dba_k") dba_k = to_int(key, value);
    else throw config_error("unknown config key: " + key);
}

inline void RunConfig::apply_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot open config file " + path);
    // two passes so a preset line applies before width overrides regardless
    // of line order
    std::vector<std::pair<std::string, std::string>> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto strip = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            size_t b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        line = strip(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error(path + ":" + std::to_string(lineno) + ": expected key=value");
        entries.emplace_back(strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
    }
    for (const auto& [k, v] : entries)
        if (k == "model.preset") set(k, v);
    for (const auto& [k, v] : entries)
        if (k != "model.preset") set(k, v);
}

inline std::vector<std::pair<std::string, std::string>> RunConfig::echo() const {
    auto fmt = [](double x) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.9g", x);
        return std::string(buf);
    };
    std::string channels;
    for (int i = 0; i < 5; ++i)
        channels += (i ? "," : "") + std::to_string(model.cnn_channels[static_cast<size_t>(i)]);
    return {
        {"seed", std::to_string(seed)},
        {"threads", std::to_string(threads)},
        {"scene.frames", std::to_string(scene.frames_total)},
        {"scene.d_h", std::to_string(scene.d_h)},
        {"scene.d_w", std::to_string(scene.d_w)},
        {"scene.fov", fmt(scene.field_of_view)},
        {"scene.ue_size", std::to_string(scene.ue_size)},
        {"scene.background", scene.background_mode == BackgroundMode::Static ? "static" : "textured"},
        {"scene.distractors", std::to_string(scene.distractor_count)},
        {"scene.noise_std", fmt(scene.noise_std)},
        {"scene.speed_min_px", fmt(scene.speed_min_px)},
        {"scene.speed_max_px", fmt(scene.speed_max_px)},
        {"scene.dwell_bias", fmt(scene.dwell_bias)},
        {"scene.r_min", fmt(scene.r_min)},
        {"scene.r_max", fmt(scene.r_max)},
        {"ula.antennas", std::to_string(ula.n_antennas)},
        {"ula.spacing", fmt(ula.element_spacing)},
        {"codebook.beams", std::to_string(codebook_beams)},
        {"channel.nlos_count", std::to_string(multipath.nlos_count)},
        {"channel.nlos_power", fmt(multipath.nlos_rel_power)},
        {"data.history", std::to_string(history)},
        {"data.horizon", std::to_string(horizon)},
        {"data.split", fmt(split_ratio)},
        {"model.cnn_channels", channels},
        {"model.embed_dim", std::to_string(model.embed_dim)},
        {"model.gru_hidden", std::to_string(model.gru_hidden)},
        {"model.heads", std::to_string(model.mha_heads)},
        {"model.pred_hidden", std::to_string(model.pred_hidden)},
        {"model.mha", model.use_mha ? "on" : "off"},
        {"train.epochs", std::to_string(train.epochs)},
        {"train.batch", std::to_string(train.batch_size)},
        {"train.lr_init", fmt(train.lr_init)},
        {"train.lr_min", fmt(train.lr_min)},
        {"train.cycle", std::to_string(train.cycle_epochs)},
        {"train.gamma", fmt(train.gamma)},
        {"train.threshold", fmt(train.preprocess_threshold)},
        {"metrics.dba_delta", fmt(dba_delta)},
        {"metrics.dba_k", std::to_string(dba_k)},
    };
}

}  // namespace beamtrack
