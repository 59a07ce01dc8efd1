#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "dwiqc/core/error.hpp"
#include "dwiqc/core/extent.hpp"
#include "dwiqc/core/fft.hpp"
#include "dwiqc/core/image.hpp"
#include "dwiqc/core/slices.hpp"
#include "dwiqc/core/volume.hpp"

namespace dwiqc {

// Slice-level injectors work on axial slices: rows are the phase-encode
// axis (y), columns the frequency-encode axis (x).

/// Nyquist ghost: k-space rows with odd index scaled by (1 - alpha), even by
/// (1 + alpha). For an even row count this equals in + alpha * roll(in, N/2).
inline Image inject_ghosting(const Image& slice, double alpha)
{
    if (!std::isfinite(alpha)) throw Error("ghosting alpha must be finite");
    if (alpha == 0.0) return slice;
    auto k = to_kspace(slice);
    for (std::size_t r = 0; r < slice.rows(); ++r) {
        const double gain = (r % 2 == 1) ? 1.0 - alpha : 1.0 + alpha;
        for (std::size_t c = 0; c < slice.cols(); ++c) k[r * slice.cols() + c] *= gain;
    }
    return from_kspace(std::move(k), slice.rows(), slice.cols());
}

/// Spatial frequency of a k-space spike, in cycles per field of view along
/// columns (x) and rows (y).
struct SpikeFrequency {
    int ku = 0;
    int kv = 0;
};

/// Herringbone: a spike pair at +-(ku, kv) in k-space, i.e.
/// out = in + amplitude * cos(2 pi (ku x / X + kv y / Y) + phase).
inline Image inject_herringbone(const Image& slice, SpikeFrequency spike, double amplitude, double phase = 0.0)
{
    if (spike.ku == 0 && spike.kv == 0) throw Error("herringbone spike at zero frequency is not an artifact");
    if (amplitude == 0.0) return slice;
    const auto rows = static_cast<long>(slice.rows());
    const auto cols = static_cast<long>(slice.cols());
    auto k = to_kspace(slice);
    auto wrap = [](long v, long n) { return static_cast<std::size_t>(((v % n) + n) % n); };
    // Forward DFT is unnormalized: a unit-amplitude exponential has weight N.
    const std::complex<double> half = std::polar(amplitude / 2.0 * static_cast<double>(rows * cols), phase);
    k[wrap(spike.kv, rows) * slice.cols() + wrap(spike.ku, cols)] += half;
    k[wrap(-spike.kv, rows) * slice.cols() + wrap(-spike.ku, cols)] += std::conj(half);
    return from_kspace(std::move(k), slice.rows(), slice.cols());
}

/// Linear-interpolated quantile of the pixel values, q in [0, 1].
inline double pixel_quantile(const Image& img, double q)
{
    std::vector<double> v(img.pixels().begin(), img.pixels().end());
    std::sort(v.begin(), v.end());
    const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
}

inline constexpr double default_chemical_shift_blend = 0.6;

/// Chemical shift: pixels above the rim quantile are copied `shift_px`
/// columns along the frequency-encode axis and alpha-blended onto the slice.
inline Image inject_chemical_shift(const Image& slice, int shift_px, double rim_quantile,
                                   double blend = default_chemical_shift_blend)
{
    if (shift_px == 0) throw Error("chemical shift displacement must be at least one pixel");
    const double threshold = pixel_quantile(slice, rim_quantile);
    Image out = slice;
    const long cols = static_cast<long>(slice.cols());
    for (std::size_t r = 0; r < slice.rows(); ++r) {
        for (long c = 0; c < cols; ++c) {
            const double v = slice(r, static_cast<std::size_t>(c));
            if (!(v > threshold)) continue;
            const long dst = c + shift_px;
            if (dst < 0 || dst >= cols) continue;
            const auto d = static_cast<std::size_t>(dst);
            out(r, d) = (1.0 - blend) * slice(r, d) + blend * v;
        }
    }
    return out;
}

/// Bilinear sample with edge clamping.
inline double sample_bilinear_clamped(const Image& img, double r, double c)
{
    r = std::clamp(r, 0.0, static_cast<double>(img.rows() - 1));
    c = std::clamp(c, 0.0, static_cast<double>(img.cols() - 1));
    const auto r0 = static_cast<std::size_t>(r);
    const auto c0 = static_cast<std::size_t>(c);
    const auto r1 = std::min(r0 + 1, img.rows() - 1);
    const auto c1 = std::min(c0 + 1, img.cols() - 1);
    const double fr = r - static_cast<double>(r0), fc = c - static_cast<double>(c0);
    return (img(r0, c0) * (1 - fc) + img(r0, c1) * fc) * (1 - fr) + (img(r1, c0) * (1 - fc) + img(r1, c1) * fc) * fr;
}

struct PixelCoord {
    int r = 0;
    int c = 0;
};

/// Susceptibility: inside a disk, pixels are pulled along the phase-encode
/// axis by a Gaussian displacement (peak `warp_scale` px at the center,
/// sigma = radius / 3) and attenuated by (1 - 0.5 * severity).
inline Image inject_susceptibility(const Image& slice, PixelCoord center, int radius, double warp_scale,
                                   double severity)
{
    if (radius < 2) throw Error("susceptibility radius must be >= 2");
    if (center.r - radius < 0 || center.c - radius < 0 || center.r + radius >= static_cast<int>(slice.rows()) ||
        center.c + radius >= static_cast<int>(slice.cols())) {
        throw Error("susceptibility disk lies outside the image");
    }
    const double attenuation = 1.0 - 0.5 * severity;
    const double sigma = radius / 3.0;
    Image out = slice;
    for (int r = center.r - radius; r <= center.r + radius; ++r) {
        for (int c = center.c - radius; c <= center.c + radius; ++c) {
            const double dr = r - center.r, dc = c - center.c;
            const double d2 = dr * dr + dc * dc;
            if (d2 > static_cast<double>(radius) * radius) continue;
            const double shift = warp_scale * std::exp(-d2 / (2.0 * sigma * sigma));
            const double v = shift == 0.0 ? slice(static_cast<std::size_t>(r), static_cast<std::size_t>(c))
                                          : sample_bilinear_clamped(slice, r - shift, c);
            out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = attenuation * v;
        }
    }
    return out;
}

/// Result of a volume-level (sagittal-class) injection.
struct VolumeInjection {
    DWIVolume volume;
    std::vector<int> affected_sagittal;
};

namespace injectors_detail {

inline bool gradient_changed(const DWIVolume& a, const DWIVolume& b, std::size_t g, double tol = 1e-9)
{
    const std::size_t n = a.voxels_per_gradient();
    for (std::size_t i = g * n; i < (g + 1) * n; ++i) {
        if (std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])) > tol) return true;
    }
    return false;
}

inline void scale_axial_plane(DWIVolume& vol, std::size_t z, std::size_t g, double factor)
{
    for (std::size_t y = 0; y < vol.ny(); ++y)
        for (std::size_t x = 0; x < vol.nx(); ++x)
            vol.at(x, y, z, g) = static_cast<float>(vol.at(x, y, z, g) * factor);
}

inline void check_gradient(const DWIVolume& vol, std::size_t g)
{
    if (g >= vol.gradient_count()) throw Error("gradient index out of range");
}

}  // namespace injectors_detail

/// Motion banding: axial planes z inside the brain z-range with
/// z % band_period == 0 are scaled by (1 - attenuation). When anything
/// changed, every kept sagittal slice of that gradient is affected.
inline VolumeInjection inject_motion(const DWIVolume& vol, std::size_t gradient, int band_period,
                                     double attenuation, const BrainExtent& extent, const ExclusionRule& rule = {})
{
    if (band_period < 2) throw Error("motion band period must be >= 2");
    injectors_detail::check_gradient(vol, gradient);
    VolumeInjection out{vol, {}};
    if (attenuation == 0.0) return out;
    for (int z = extent.bbox[2].lo; z <= extent.bbox[2].hi; ++z) {
        if (z % band_period == 0) {
            injectors_detail::scale_axial_plane(out.volume, static_cast<std::size_t>(z), gradient, 1.0 - attenuation);
        }
    }
    if (injectors_detail::gradient_changed(vol, out.volume, gradient)) {
        out.affected_sagittal = kept_indices(View::sagittal, extent, rule);
    }
    return out;
}

/// sign() with a dead zone so sin(k pi) rounding noise counts as zero.
inline double robust_sign(double v, double eps = 1e-9)
{
    return v > eps ? 1.0 : (v < -eps ? -1.0 : 0.0);
}

/// Multiband interleaving: axial plane z scaled by
/// (1 + gain * sign(sin(2 pi z / mb_period))); labeling as for motion.
inline VolumeInjection inject_multiband(const DWIVolume& vol, std::size_t gradient, int mb_period, double gain,
                                        const BrainExtent& extent, const ExclusionRule& rule = {})
{
    if (mb_period < 2) throw Error("multiband period must be >= 2");
    injectors_detail::check_gradient(vol, gradient);
    VolumeInjection out{vol, {}};
    if (gain == 0.0) return out;
    for (std::size_t z = 0; z < vol.nz(); ++z) {
        const double s = robust_sign(std::sin(2.0 * std::numbers::pi * static_cast<double>(z) / mb_period));
        if (s != 0.0) injectors_detail::scale_axial_plane(out.volume, z, gradient, 1.0 + gain * s);
    }
    if (injectors_detail::gradient_changed(vol, out.volume, gradient)) {
        out.affected_sagittal = kept_indices(View::sagittal, extent, rule);
    }
    return out;
}

}  // namespace dwiqc
