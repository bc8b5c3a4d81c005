#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "beamtrack/common.hpp"

namespace beamtrack {

// complex antenna-domain vector, split storage
struct ComplexVec {
    std::vector<double> re, im;

    ComplexVec() = default;
    explicit ComplexVec(size_t n) : re(n, 0.0), im(n, 0.0) {}

    size_t size() const { return re.size(); }
};

// h^H v
inline std::complex<double> cdot(const ComplexVec& h, const ComplexVec& v) {
    if (h.size() != v.size()) throw std::invalid_argument("cdot: length mismatch");
    double rr = 0.0, ii = 0.0;
    for (size_t i = 0; i < h.size(); ++i) {
        // conj(h_i) * v_i
        rr += h.re[i] * v.re[i] + h.im[i] * v.im[i];
        ii += h.re[i] * v.im[i] - h.im[i] * v.re[i];
    }
    return {rr, ii};
}

inline double cnorm(const ComplexVec& a) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a.re[i] * a.re[i] + a.im[i] * a.im[i];
    return std::sqrt(s);
}

inline ComplexVec cscale(const ComplexVec& a, double s) {
    ComplexVec out = a;
    for (auto& x : out.re) x *= s;
    for (auto& x : out.im) x *= s;
    return out;
}

struct ULAConfig {
    int n_antennas = 32;
    double element_spacing = 0.5;  // in wavelengths

    void validate() const {
        if (n_antennas < 1) throw std::invalid_argument("ULAConfig: n_antennas must be >= 1");
        if (!(element_spacing > 0)) throw std::invalid_argument("ULAConfig: element_spacing must be > 0");
    }
};

// C unit-norm beams; beam index c in [1, C] maps to beams[c-1]
struct Codebook {
    std::vector<ComplexVec> beams;

    int size() const { return static_cast<int>(beams.size()); }
    const ComplexVec& beam(int index_1based) const { return beams[static_cast<size_t>(index_1based - 1)]; }
};

struct NoiseConfig {
    double sigma2 = 0.0;  // linear noise power
    uint64_t seed = 0;
};

// unit-norm array response: a_n = exp(j*2*pi*spacing*n*sin(theta)) / sqrt(N)
inline ComplexVec steering_vector(double theta, const ULAConfig& ula) {
    ula.validate();
    int n = ula.n_antennas;
    ComplexVec a(static_cast<size_t>(n));
    double scale = 1.0 / std::sqrt(static_cast<double>(n));
    double phase_step = 2.0 * M_PI * ula.element_spacing * std::sin(theta);
    for (int i = 0; i < n; ++i) {
        a.re[static_cast<size_t>(i)] = std::cos(phase_step * i) * scale;
        a.im[static_cast<size_t>(i)] = std::sin(phase_step * i) * scale;
    }
    return a;
}

// steering vectors on a uniform sin(theta) grid over [-1+1/C, 1-1/C]
inline Codebook dft_codebook(const ULAConfig& ula, int c_beams) {
    if (c_beams < 1) throw std::invalid_argument("dft_codebook: c_beams must be >= 1");
    Codebook cb;
    cb.beams.reserve(static_cast<size_t>(c_beams));
    for (int c = 1; c <= c_beams; ++c) {
        double s = -1.0 + (2.0 * c - 1.0) / c_beams;
        cb.beams.push_back(steering_vector(std::asin(s), ula));
    }
    return cb;
}

// y = h^H v s + n, n ~ CN(0, sigma2) drawn from the caller's generator
inline std::complex<double> received_signal(const ComplexVec& h, const ComplexVec& v, std::complex<double> s,
                                            const NoiseConfig& noise, Rng& rng) {
    if (h.size() != v.size()) throw std::invalid_argument("received_signal: length mismatch");
    if (noise.sigma2 < 0) throw std::invalid_argument("received_signal: sigma2 must be >= 0");
    std::complex<double> y = cdot(h, v) * s;
    if (noise.sigma2 > 0) {
        double sd = std::sqrt(noise.sigma2 / 2.0);
        y += std::complex<double>(sd * rng.normal(), sd * rng.normal());
    }
    return y;
}

// |h^H v|^2 / sigma2
inline double snr(const ComplexVec& h, const ComplexVec& v, double sigma2) {
    if (!(sigma2 > 0)) throw std::domain_error("snr: sigma2 must be > 0");
    return std::norm(cdot(h, v)) / sigma2;
}

// sum_tau log2(1 + SNR[tau])
inline double spectral_efficiency(const std::vector<ComplexVec>& h_seq, const std::vector<ComplexVec>& v_seq,
                                  double sigma2) {
    if (h_seq.size() != v_seq.size()) throw std::invalid_argument("spectral_efficiency: sequence length mismatch");
    double r = 0.0;
    for (size_t t = 0; t < h_seq.size(); ++t) r += std::log2(1.0 + snr(h_seq[t], v_seq[t], sigma2));
    return r;
}

// exhaustive search per slot: argmax_c |h^H v_c|^2, ties to the lowest index.
// Returned indices are 1-based.
inline std::vector<int> oracle_beams(const std::vector<ComplexVec>& h_seq, const Codebook& codebook) {
    if (h_seq.empty()) throw std::invalid_argument("oracle_beams: empty channel sequence");
    std::vector<int> labels;
    labels.reserve(h_seq.size());
    for (const auto& h : h_seq) {
        int best_c = 1;
        double best_gain = std::norm(cdot(h, codebook.beam(1)));
        for (int c = 2; c <= codebook.size(); ++c) {
            double gain = std::norm(cdot(h, codebook.beam(c)));
            if (gain > best_gain) {
                best_gain = gain;
                best_c = c;
            }
        }
        labels.push_back(best_c);
    }
    return labels;
}

}  // namespace beamtrack
