#pragma once

#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <utility>
#include <vector>

#include "dwiqc/core/error.hpp"
#include "dwiqc/core/fft.hpp"
#include "dwiqc/core/image.hpp"

namespace dwiqc {

struct GaborConfig {
    int n_scales = 4;
    int n_orientations = 4;
    double base_wavelength = 4.0;  // px
    double scale_factor = 2.0;
    double sigma_ratio = 0.56;  // envelope sigma / wavelength
    bool zero_dc = true;

    void validate() const
    {
        if (n_scales < 1 || n_orientations < 1) throw ConfigError("gabor: scales and orientations must be >= 1");
        if (!(base_wavelength >= 2.0)) throw ConfigError("gabor: base_wavelength must be >= 2 px");
        if (!(scale_factor > 0.0) || !(sigma_ratio > 0.0)) throw ConfigError("gabor: factors must be positive");
    }

    std::size_t feature_dim() const { return 2 * static_cast<std::size_t>(n_scales * n_orientations); }

    friend bool operator==(const GaborConfig&, const GaborConfig&) = default;
};

/// Square complex kernel of odd side 2*half+1, indexed [dr + half][dc + half].
struct GaborKernel {
    int scale = 0;
    int orientation = 0;
    double wavelength = 0.0;
    double theta = 0.0;
    double sigma = 0.0;
    int half = 0;
    std::vector<std::complex<double>> taps;

    std::size_t side() const { return static_cast<std::size_t>(2 * half + 1); }
    std::complex<double> at(int dr, int dc) const
    {
        return taps[static_cast<std::size_t>(dr + half) * side() + static_cast<std::size_t>(dc + half)];
    }
};

/// Kernel of scale s and orientation k: Gaussian envelope (normalized to unit
/// sum) times a complex carrier along theta = k pi / n. With zero_dc the
/// Morlet correction removes the DC term so the taps sum to zero.
inline GaborKernel make_gabor_kernel(const GaborConfig& cfg, int s, int k)
{
    GaborKernel g;
    g.scale = s;
    g.orientation = k;
    g.wavelength = cfg.base_wavelength * std::pow(cfg.scale_factor, s);
    g.theta = k * std::numbers::pi / cfg.n_orientations;
    g.sigma = cfg.sigma_ratio * g.wavelength;
    g.half = static_cast<int>(std::ceil(3.0 * g.sigma));
    const std::size_t n = g.side();
    std::vector<double> env(n * n);
    g.taps.resize(n * n);
    double env_sum = 0.0;
    const double ct = std::cos(g.theta), st = std::sin(g.theta);
    for (int dr = -g.half; dr <= g.half; ++dr) {
        for (int dc = -g.half; dc <= g.half; ++dc) {
            const std::size_t i = static_cast<std::size_t>(dr + g.half) * n + static_cast<std::size_t>(dc + g.half);
            env[i] = std::exp(-(dr * dr + dc * dc) / (2.0 * g.sigma * g.sigma));
            env_sum += env[i];
            // x along columns, y along rows.
            const double xp = dc * ct + dr * st;
            g.taps[i] = env[i] * std::polar(1.0, 2.0 * std::numbers::pi * xp / g.wavelength);
        }
    }
    std::complex<double> dc_sum = 0.0;
    for (std::size_t i = 0; i < n * n; ++i) {
        env[i] /= env_sum;
        g.taps[i] /= env_sum;
        dc_sum += g.taps[i];
    }
    if (cfg.zero_dc) {
        for (std::size_t i = 0; i < n * n; ++i) g.taps[i] -= dc_sum * env[i];
    }
    return g;
}

/// Half-sample symmetric reflection of index i into [0, n), any i.
inline std::size_t reflect_index(long i, long n)
{
    const long period = 2 * n;
    long m = i % period;
    if (m < 0) m += period;
    return static_cast<std::size_t>(m < n ? m : period - 1 - m);
}

/// Direct convolution with reflect padding: out(r,c) = sum K(dr,dc) I(r-dr, c-dc).
inline std::vector<std::complex<double>> convolve_direct(const Image& img, const GaborKernel& k)
{
    const long rows = static_cast<long>(img.rows()), cols = static_cast<long>(img.cols());
    std::vector<std::complex<double>> out(img.size());
    for (long r = 0; r < rows; ++r) {
        for (long c = 0; c < cols; ++c) {
            std::complex<double> acc = 0.0;
            for (int dr = -k.half; dr <= k.half; ++dr) {
                const std::size_t rr = reflect_index(r - dr, rows);
                for (int dc = -k.half; dc <= k.half; ++dc) {
                    acc += k.at(dr, dc) * img(rr, reflect_index(c - dc, cols));
                }
            }
            out[static_cast<std::size_t>(r * cols + c)] = acc;
        }
    }
    return out;
}

/// The filter bank. Kernel spectra are cached per padded grid shape, so a
/// shared bank serves concurrent extraction.
class GaborBank {
public:
    explicit GaborBank(GaborConfig cfg = {}) : cfg_(cfg)
    {
        cfg_.validate();
        for (int s = 0; s < cfg_.n_scales; ++s) {
            for (int k = 0; k < cfg_.n_orientations; ++k) {
                kernels_.push_back(make_gabor_kernel(cfg_, s, k));
                max_half_ = std::max(max_half_, kernels_.back().half);
            }
        }
    }

    const GaborConfig& config() const { return cfg_; }
    const std::vector<GaborKernel>& kernels() const { return kernels_; }
    std::size_t size() const { return kernels_.size(); }

    /// Complex responses of every kernel (same order as kernels()), each
    /// rows*cols, computed through one padded FFT of the image.
    std::vector<std::vector<std::complex<double>>> responses(const Image& img) const
    {
        const std::size_t rows = img.rows(), cols = img.cols();
        const long h = max_half_;
        const std::size_t pr = next_fast_fft_size(rows + 2 * static_cast<std::size_t>(h));
        const std::size_t pc = next_fast_fft_size(cols + 2 * static_cast<std::size_t>(h));
        ComplexGrid padded(pr * pc);
        for (std::size_t r = 0; r < pr; ++r) {
            const std::size_t sr = reflect_index(static_cast<long>(r) - h, static_cast<long>(rows));
            for (std::size_t c = 0; c < pc; ++c) {
                padded[r * pc + c] = img(sr, reflect_index(static_cast<long>(c) - h, static_cast<long>(cols)));
            }
        }
        fft2_forward(padded, pr, pc);
        const auto& spectra = kernel_spectra(pr, pc);
        std::vector<std::vector<std::complex<double>>> out(kernels_.size());
        ComplexGrid work(pr * pc);
        for (std::size_t k = 0; k < kernels_.size(); ++k) {
            for (std::size_t i = 0; i < work.size(); ++i) work[i] = padded[i] * spectra[k][i];
            fft2_inverse(work, pr, pc);
            auto& o = out[k];
            o.resize(rows * cols);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) {
                    o[r * cols + c] = work[(r + static_cast<std::size_t>(h)) * pc + c + static_cast<std::size_t>(h)];
                }
            }
        }
        return out;
    }

private:
    const std::vector<ComplexGrid>& kernel_spectra(std::size_t pr, std::size_t pc) const
    {
        std::lock_guard lock(mutex_);
        auto& slot = spectra_[{pr, pc}];
        if (slot.empty()) {
            for (const auto& k : kernels_) {
                ComplexGrid grid(pr * pc);
                for (int dr = -k.half; dr <= k.half; ++dr) {
                    for (int dc = -k.half; dc <= k.half; ++dc) {
                        const std::size_t r = reflect_free_wrap(dr, pr), c = reflect_free_wrap(dc, pc);
                        grid[r * pc + c] = k.at(dr, dc);
                    }
                }
                fft2_forward(grid, pr, pc);
                slot.push_back(std::move(grid));
            }
        }
        return slot;
    }

    static std::size_t reflect_free_wrap(int v, std::size_t n)
    {
        const long m = static_cast<long>(n);
        return static_cast<std::size_t>(((v % m) + m) % m);
    }

    GaborConfig cfg_;
    std::vector<GaborKernel> kernels_;
    int max_half_ = 0;
    mutable std::mutex mutex_;
    mutable std::map<std::pair<std::size_t, std::size_t>, std::vector<ComplexGrid>> spectra_;
};

inline std::vector<GaborKernel> gabor_bank(const GaborConfig& cfg = {})
{
    return GaborBank(cfg).kernels();
}

/// Mean and population std of a response magnitude.
inline std::pair<double, double> magnitude_moments(const std::vector<std::complex<double>>& resp)
{
    const double n = static_cast<double>(resp.size());
    double mean = 0.0;
    for (const auto& v : resp) mean += std::abs(v);
    mean /= n;
    double var = 0.0;
    for (const auto& v : resp) {
        const double d = std::abs(v) - mean;
        var += d * d;
    }
    return {mean, std::sqrt(var / n)};
}

/// (mean, std) of |response| per kernel: 2 * scales * orientations values.
inline std::vector<double> gabor_features(const Image& img, const GaborBank& bank)
{
    if (img.empty()) throw Error("gabor: empty image");
    std::vector<double> out;
    out.reserve(2 * bank.size());
    for (const auto& resp : bank.responses(img)) {
        const auto [mean, sd] = magnitude_moments(resp);
        out.push_back(mean);
        out.push_back(sd);
    }
    if (out.size() != bank.config().feature_dim()) throw Error("gabor: feature dimension mismatch");
    return out;
}

inline std::vector<double> gabor_features(const Image& img, const GaborConfig& cfg = {})
{
    return gabor_features(img, GaborBank(cfg));
}

}  // namespace dwiqc
