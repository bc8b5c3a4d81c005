#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "beamtrack/common.hpp"
#include "beamtrack/tensor.hpp"

namespace beamtrack {

inline Image frame_difference(const Image& prev, const Image& cur) {
    if (prev.channels != cur.channels || prev.height != cur.height || prev.width != cur.width)
        throw std::invalid_argument("frame_difference: shape mismatch");
    Image out(cur.channels, cur.height, cur.width);
    for (size_t i = 0; i < cur.v.size(); ++i) out.v[i] = std::abs(cur.v[i] - prev.v[i]);
    return out;
}

// pixel is on iff the max-over-channels difference exceeds the threshold
inline std::vector<uint8_t> motion_mask(const Image& diff, double threshold) {
    std::vector<uint8_t> mask(static_cast<size_t>(diff.height) * diff.width, 0);
    for (int y = 0; y < diff.height; ++y)
        for (int x = 0; x < diff.width; ++x) {
            float m = 0.0f;
            for (int c = 0; c < diff.channels; ++c) m = std::max(m, diff.at(c, y, x));
            if (m > threshold) mask[static_cast<size_t>(y) * diff.width + x] = 1;
        }
    return mask;
}

// X[t] = g(Z[t]): each frame is masked by the motion mask of its difference
// with the previous frame, keeping UE appearance and suppressing background.
// The first frame has no predecessor and comes out all zero.
inline std::vector<Image> preprocess_sequence(const std::vector<Image>& frames, double threshold = 0.05) {
    if (frames.empty()) throw std::invalid_argument("preprocess_sequence: empty sequence");
    std::vector<Image> out;
    out.reserve(frames.size());
    for (size_t i = 0; i < frames.size(); ++i) {
        const Image& cur = frames[i];
        Image masked(cur.channels, cur.height, cur.width);
        if (i > 0) {
            Image diff = frame_difference(frames[i - 1], cur);
            std::vector<uint8_t> mask = motion_mask(diff, threshold);
            for (int c = 0; c < cur.channels; ++c)
                for (int y = 0; y < cur.height; ++y)
                    for (int x = 0; x < cur.width; ++x)
                        if (mask[static_cast<size_t>(y) * cur.width + x]) masked.at(c, y, x) = cur.at(c, y, x);
        }
        out.push_back(std::move(masked));
    }
    return out;
}

// stacks n same-sized images into an [n×c×h×w] tensor
template <class S>
TensorT<S> pack_frames(const std::vector<Image>& frames) {
    if (frames.empty()) throw std::invalid_argument("pack_frames: empty sequence");
    int c = frames[0].channels, h = frames[0].height, w = frames[0].width;
    TensorT<S> out({static_cast<int>(frames.size()), c, h, w});
    size_t off = 0;
    for (const Image& img : frames) {
        if (img.channels != c || img.height != h || img.width != w)
            throw std::invalid_argument("pack_frames: frame shape mismatch");
        for (float x : img.v) out.v()[off++] = static_cast<S>(x);
    }
    return out;
}

}  // namespace beamtrack
