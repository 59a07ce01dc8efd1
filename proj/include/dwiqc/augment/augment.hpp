#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "dwiqc/core/error.hpp"
#include "dwiqc/core/image.hpp"
#include "dwiqc/core/parallel.hpp"
#include "dwiqc/core/rng.hpp"

namespace dwiqc {

/// Bounds of the random geometric transform. Ranges are symmetric around
/// the identity; angles in degrees, translation as a fraction of the side.
struct AugmentConfig {
    double max_translation = 0.1;
    double max_rotation = 15.0;
    std::array<double, 2> zoom_range{0.9, 1.1};
    double max_shear = 10.0;
    bool allow_hflip = true;
    bool allow_vflip = true;
    int multiplier = 2;

    void validate() const
    {
        if (!(zoom_range[0] > 0.0) || !(zoom_range[1] >= zoom_range[0])) {
            throw ConfigError("augment: zoom_range must be positive and ordered");
        }
        if (!(max_rotation >= 0.0 && max_rotation < 180.0)) {
            throw ConfigError("augment: max_rotation must be in [0, 180)");
        }
        if (!(max_translation >= 0.0) || !(max_shear >= 0.0 && max_shear < 90.0)) {
            throw ConfigError("augment: translation and shear bounds must be non-negative (shear < 90)");
        }
        if (multiplier < 0) throw ConfigError("augment: multiplier must be >= 0");
    }

    /// All ranges collapsed and flips off.
    static AugmentConfig identity()
    {
        return {0.0, 0.0, {1.0, 1.0}, 0.0, false, false, 0};
    }
};

/// One drawn transform.
struct AugmentParams {
    double tx = 0.0;  // px along columns
    double ty = 0.0;  // px along rows
    double rotation = 0.0;  // radians
    double zoom_x = 1.0;
    double zoom_y = 1.0;
    double shear = 0.0;  // radians
    bool hflip = false;
    bool vflip = false;
};

inline AugmentParams draw_augment_params(const AugmentConfig& cfg, std::size_t rows, std::size_t cols, Rng& rng)
{
    constexpr double deg = std::numbers::pi / 180.0;
    AugmentParams p;
    p.tx = rng.uniform(-cfg.max_translation, cfg.max_translation) * static_cast<double>(cols);
    p.ty = rng.uniform(-cfg.max_translation, cfg.max_translation) * static_cast<double>(rows);
    p.rotation = rng.uniform(-cfg.max_rotation, cfg.max_rotation) * deg;
    p.zoom_x = rng.uniform(cfg.zoom_range[0], cfg.zoom_range[1]);
    p.zoom_y = rng.uniform(cfg.zoom_range[0], cfg.zoom_range[1]);
    p.shear = rng.uniform(-cfg.max_shear, cfg.max_shear) * deg;
    p.hflip = cfg.allow_hflip && rng.bernoulli(0.5);
    p.vflip = cfg.allow_vflip && rng.bernoulli(0.5);
    return p;
}

namespace augment_detail {

inline double sample_zero_fill(const Image& img, double r, double c)
{
    const double fr0 = std::floor(r), fc0 = std::floor(c);
    const double wr = r - fr0, wc = c - fc0;
    const long r0 = static_cast<long>(fr0), c0 = static_cast<long>(fc0);
    const long rows = static_cast<long>(img.rows()), cols = static_cast<long>(img.cols());
    auto at = [&](long rr, long cc) {
        return (rr < 0 || cc < 0 || rr >= rows || cc >= cols)
                   ? 0.0
                   : img(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
    };
    double v = 0.0;
    if ((1 - wr) * (1 - wc) != 0.0) v += (1 - wr) * (1 - wc) * at(r0, c0);
    if ((1 - wr) * wc != 0.0) v += (1 - wr) * wc * at(r0, c0 + 1);
    if (wr * (1 - wc) != 0.0) v += wr * (1 - wc) * at(r0 + 1, c0);
    if (wr * wc != 0.0) v += wr * wc * at(r0 + 1, c0 + 1);
    return v;
}

}  // namespace augment_detail

/// dst = T R Z S F (src - center) + center, resampled bilinearly by inverse
/// mapping with zero fill outside the source grid.
inline Image apply_augment(const Image& img, const AugmentParams& p)
{
    // Forward linear part in (x = col, y = row) coordinates.
    const double fx = p.hflip ? -1.0 : 1.0, fy = p.vflip ? -1.0 : 1.0;
    const double cr = std::cos(p.rotation), sr = std::sin(p.rotation), sh = std::tan(p.shear);
    // S F
    double a00 = fx, a01 = sh * fy, a10 = 0.0, a11 = fy;
    // Z
    a00 *= p.zoom_x;
    a01 *= p.zoom_x;
    a10 *= p.zoom_y;
    a11 *= p.zoom_y;
    // R
    const double b00 = cr * a00 - sr * a10, b01 = cr * a01 - sr * a11;
    const double b10 = sr * a00 + cr * a10, b11 = sr * a01 + cr * a11;
    const double det = b00 * b11 - b01 * b10;
    if (std::abs(det) < 1e-12) throw Error("augment: singular transform");
    const double i00 = b11 / det, i01 = -b01 / det, i10 = -b10 / det, i11 = b00 / det;

    const double cx = (static_cast<double>(img.cols()) - 1.0) / 2.0;
    const double cy = (static_cast<double>(img.rows()) - 1.0) / 2.0;
    Image out(img.rows(), img.cols());
    for (std::size_t r = 0; r < img.rows(); ++r) {
        for (std::size_t c = 0; c < img.cols(); ++c) {
            const double dx = static_cast<double>(c) - cx - p.tx;
            const double dy = static_cast<double>(r) - cy - p.ty;
            const double sx = i00 * dx + i01 * dy + cx;
            const double sy = i10 * dx + i11 * dy + cy;
            out(r, c) = augment_detail::sample_zero_fill(img, sy, sx);
        }
    }
    return out;
}

/// Random transform of one slice; metadata and label are carried over.
inline SliceSample augment(const SliceSample& sample, const AugmentConfig& cfg, Rng& rng)
{
    SliceSample out = sample;
    out.pixels = apply_augment(sample.pixels, draw_augment_params(cfg, sample.pixels.rows(), sample.pixels.cols(), rng));
    return out;
}

/// Originals (unchanged, in order) followed by `multiplier` transformed
/// copies of each sample. Copy j of sample i draws from stream (seed, i, j).
inline std::vector<SliceSample> augment_dataset(const std::vector<SliceSample>& samples, const AugmentConfig& cfg,
                                                std::uint64_t seed)
{
    cfg.validate();
    const auto m = static_cast<std::size_t>(cfg.multiplier);
    std::vector<SliceSample> out(samples.size() * (1 + m));
    std::copy(samples.begin(), samples.end(), out.begin());
    parallel_for(samples.size() * m, [&](std::size_t k) {
        const std::size_t i = k / m, j = k % m;
        Rng rng(stream_seed(seed, i, j + 1));
        SliceSample s = augment(samples[i], cfg, rng);
        s.augmentation = static_cast<int>(j + 1);
        out[samples.size() + k] = std::move(s);
    });
    return out;
}

}  // namespace dwiqc
