#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "dwiqc/core/error.hpp"
#include "dwiqc/core/image.hpp"

namespace dwiqc {

/// Uniform rotation-invariant LBP with P circular neighbors at radius R.
struct LbpConfig {
    int neighbors = 8;
    double radius = 1.0;

    void validate() const
    {
        if (neighbors < 4 || neighbors > 32) throw ConfigError("lbp: neighbors must be in [4, 32]");
        if (!(radius > 0.0)) throw ConfigError("lbp: radius must be positive");
    }

    std::size_t feature_dim() const { return static_cast<std::size_t>(neighbors + 2); }

    friend bool operator==(const LbpConfig&, const LbpConfig&) = default;
};

/// Code for a circular bit pattern: number of ones when there are at most
/// two 0/1 transitions, otherwise P + 1.
inline int lbp_riu2_code(const std::vector<int>& bits)
{
    const std::size_t p = bits.size();
    int transitions = 0, ones = 0;
    for (std::size_t i = 0; i < p; ++i) {
        transitions += bits[i] != bits[(i + 1) % p];
        ones += bits[i];
    }
    return transitions <= 2 ? ones : static_cast<int>(p) + 1;
}

/// Normalized (P+2)-bin histogram over pixels whose whole neighborhood lies
/// inside the image. Neighbors are bilinear samples; ties count as set bits.
inline std::vector<double> lbp_features(const Image& img, const LbpConfig& cfg = {})
{
    cfg.validate();
    const int p = cfg.neighbors;
    const int margin = static_cast<int>(std::ceil(cfg.radius - 1e-9));
    const int rows = static_cast<int>(img.rows()), cols = static_cast<int>(img.cols());
    if (rows < 2 * margin + 1 || cols < 2 * margin + 1) throw Error("lbp: image smaller than the neighborhood");

    struct Tap {
        int r0, c0;
        double w00, w01, w10, w11;
    };
    auto snap = [](double v) {
        const double rv = std::round(v);
        return std::abs(v - rv) < 1e-9 ? rv : v;
    };
    std::vector<Tap> taps(static_cast<std::size_t>(p));
    for (int i = 0; i < p; ++i) {
        const double a = 2.0 * std::numbers::pi * i / p;
        const double dr = snap(-cfg.radius * std::sin(a)), dc = snap(cfg.radius * std::cos(a));
        const double fr = std::floor(dr), fc = std::floor(dc);
        const double wr = dr - fr, wc = dc - fc;
        taps[static_cast<std::size_t>(i)] = {static_cast<int>(fr), static_cast<int>(fc), (1 - wr) * (1 - wc),
                                             (1 - wr) * wc, wr * (1 - wc), wr * wc};
    }

    std::vector<double> hist(cfg.feature_dim(), 0.0);
    std::vector<int> bits(static_cast<std::size_t>(p));
    std::size_t count = 0;
    for (int r = margin; r < rows - margin; ++r) {
        for (int c = margin; c < cols - margin; ++c) {
            const double center = img(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
            for (int i = 0; i < p; ++i) {
                const auto& t = taps[static_cast<std::size_t>(i)];
                const int rr = r + t.r0, cc = c + t.c0;
                auto px = [&](int dr, int dc) {
                    const int y = std::min(rr + dr, rows - 1), x = std::min(cc + dc, cols - 1);
                    return img(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
                };
                double v = t.w00 * px(0, 0);
                if (t.w01 != 0.0) v += t.w01 * px(0, 1);
                if (t.w10 != 0.0) v += t.w10 * px(1, 0);
                if (t.w11 != 0.0) v += t.w11 * px(1, 1);
                bits[static_cast<std::size_t>(i)] = v >= center ? 1 : 0;
            }
            hist[static_cast<std::size_t>(lbp_riu2_code(bits))] += 1.0;
            ++count;
        }
    }
    for (auto& h : hist) h /= static_cast<double>(count);
    return hist;
}

}  // namespace dwiqc
