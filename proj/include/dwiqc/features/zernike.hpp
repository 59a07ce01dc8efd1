#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <utility>
#include <vector>

#include "dwiqc/core/error.hpp"
#include "dwiqc/core/image.hpp"

namespace dwiqc {

struct ZernikeConfig {
    int max_order = 4;
    /// Restrict the output to a single (n, m) moment.
    std::optional<std::pair<int, int>> only;

    void validate() const
    {
        if (max_order < 0) throw ConfigError("zernike: max_order must be >= 0");
        if (only) {
            const auto [n, m] = *only;
            if (n < 0 || m < 0 || m > n || (n - m) % 2 != 0 || n > max_order) {
                throw ConfigError("zernike: restricted (n, m) is not admissible");
            }
        }
    }

    friend bool operator==(const ZernikeConfig&, const ZernikeConfig&) = default;
};

/// Admissible (n, m): n <= max_order, 0 <= m <= n, n - m even; ordered by n then m.
inline std::vector<std::pair<int, int>> zernike_indices(const ZernikeConfig& cfg)
{
    cfg.validate();
    if (cfg.only) return {*cfg.only};
    std::vector<std::pair<int, int>> out;
    for (int n = 0; n <= cfg.max_order; ++n) {
        for (int m = n % 2; m <= n; m += 2) out.emplace_back(n, m);
    }
    return out;
}

inline double zernike_radial(int n, int m, double rho)
{
    double f_nm = 0.0;
    for (int s = 0; s <= (n - m) / 2; ++s) {
        const double num = std::tgamma(n - s + 1.0);
        const double den = std::tgamma(s + 1.0) * std::tgamma((n + m) / 2 - s + 1.0) * std::tgamma((n - m) / 2 - s + 1.0);
        f_nm += ((s % 2) ? -1.0 : 1.0) * num / den * std::pow(rho, n - 2 * s);
    }
    return f_nm;
}

/// Complex moments A(n, m) = (n+1)/pi * sum f R_nm(rho) e^{-i m theta} dA.
/// The image is zero-padded (centered) to a square of side N; pixel centers
/// map to [-1, 1]^2 with dA = (2/N)^2 and pixels with rho > 1 are ignored.
inline std::vector<std::complex<double>> zernike_moments(const Image& img, const ZernikeConfig& cfg = {})
{
    const auto idx = zernike_indices(cfg);
    const std::size_t n = std::max(img.rows(), img.cols());
    if (n == 0) throw Error("zernike: empty image");
    const std::size_t r_off = (n - img.rows()) / 2, c_off = (n - img.cols()) / 2;
    const double nd = static_cast<double>(n);
    const double da = (2.0 / nd) * (2.0 / nd);
    std::vector<std::complex<double>> acc(idx.size());
    std::size_t inside = 0;
    for (std::size_t r = 0; r < img.rows(); ++r) {
        const double y = (nd - 1.0 - 2.0 * static_cast<double>(r + r_off)) / nd;
        for (std::size_t c = 0; c < img.cols(); ++c) {
            const double x = (2.0 * static_cast<double>(c + c_off) + 1.0 - nd) / nd;
            const double rho = std::sqrt(x * x + y * y);
            if (rho > 1.0) continue;
            ++inside;
            const double f = img(r, c);
            if (f == 0.0) continue;
            const double theta = std::atan2(y, x);
            for (std::size_t k = 0; k < idx.size(); ++k) {
                const auto [nn, m] = idx[k];
                acc[k] += f * zernike_radial(nn, m, rho) * std::polar(1.0, -m * theta);
            }
        }
    }
    if (inside == 0) throw Error("zernike: no pixels inside the unit disk");
    for (std::size_t k = 0; k < idx.size(); ++k) acc[k] *= (idx[k].first + 1) / std::numbers::pi * da;
    return acc;
}

/// |A(n, m)| for each admissible pair; 9 values at max_order 4.
inline std::vector<double> zernike_features(const Image& img, const ZernikeConfig& cfg = {})
{
    std::vector<double> out;
    for (const auto& a : zernike_moments(img, cfg)) out.push_back(std::abs(a));
    return out;
}

}  // namespace dwiqc
