#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <vector>

#include "dwiqc/core/error.hpp"
#include "dwiqc/core/volume.hpp"

namespace dwiqc {

/// Inclusive index interval.
struct IndexRange {
    int lo = 0;
    int hi = -1;

    bool empty() const noexcept { return hi < lo; }
    int count() const noexcept { return empty() ? 0 : hi - lo + 1; }
    bool contains(int i) const noexcept { return i >= lo && i <= hi; }
    friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

/// Head/brain mask with its tight bounding box (x, y, z).
struct BrainExtent {
    std::size_t nx = 0, ny = 0, nz = 0;
    std::vector<std::uint8_t> mask;
    std::array<IndexRange, 3> bbox;

    bool inside(std::size_t x, std::size_t y, std::size_t z) const noexcept
    {
        return mask[x + nx * (y + ny * z)] != 0;
    }
    std::size_t voxel_count() const noexcept
    {
        return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
    }
};

/// Gradient used for masking: first b<=50 image when b-values are known,
/// otherwise the gradient with the highest mean signal.
inline std::size_t reference_gradient(const DWIVolume& vol)
{
    const auto& b = vol.bvals();
    if (b.size() == vol.gradient_count()) {
        for (std::size_t g = 0; g < b.size(); ++g) {
            if (b[g] <= 50.0) return g;
        }
    }
    std::size_t best = 0;
    double best_mean = -std::numeric_limits<double>::infinity();
    const std::size_t n = vol.voxels_per_gradient();
    for (std::size_t g = 0; g < vol.gradient_count(); ++g) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += vol.data()[g * n + i];
        if (sum / static_cast<double>(n) > best_mean) {
            best_mean = sum / static_cast<double>(n);
            best = g;
        }
    }
    return best;
}

/// Otsu threshold over a 256-bin histogram of the values.
inline double otsu_threshold(const float* values, std::size_t n)
{
    const auto [lo_it, hi_it] = std::minmax_element(values, values + n);
    const double lo = *lo_it, hi = *hi_it;
    constexpr int bins = 256;
    const double width = (hi - lo) / bins;
    std::array<double, bins> hist{};
    for (std::size_t i = 0; i < n; ++i) {
        int b = static_cast<int>((values[i] - lo) / width);
        hist[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))] += 1.0;
    }
    double total_mean = 0.0;
    for (int b = 0; b < bins; ++b) total_mean += b * hist[static_cast<std::size_t>(b)];
    total_mean /= static_cast<double>(n);

    double w0 = 0.0, sum0 = 0.0, best = -1.0;
    int best_bin = 0;
    for (int t = 0; t < bins - 1; ++t) {
        w0 += hist[static_cast<std::size_t>(t)];
        sum0 += t * hist[static_cast<std::size_t>(t)];
        const double w1 = static_cast<double>(n) - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double mu0 = sum0 / w0;
        const double mu1 = (total_mean * static_cast<double>(n) - sum0) / w1;
        const double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (between > best) {
            best = between;
            best_bin = t;
        }
    }
    return lo + (best_bin + 1) * width;
}

namespace extent_detail {

inline void keep_largest_component(std::vector<std::uint8_t>& mask, std::size_t nx, std::size_t ny,
                                   std::size_t nz)
{
    std::vector<std::int32_t> label(mask.size(), 0);
    std::int32_t current = 0, best_label = 0;
    std::size_t best_size = 0;
    std::deque<std::size_t> queue;
    for (std::size_t start = 0; start < mask.size(); ++start) {
        if (!mask[start] || label[start]) continue;
        ++current;
        std::size_t size = 0;
        label[start] = current;
        queue.push_back(start);
        while (!queue.empty()) {
            const std::size_t v = queue.front();
            queue.pop_front();
            ++size;
            const std::size_t x = v % nx, y = (v / nx) % ny, z = v / (nx * ny);
            auto visit = [&](std::size_t w) {
                if (mask[w] && !label[w]) {
                    label[w] = current;
                    queue.push_back(w);
                }
            };
            if (x > 0) visit(v - 1);
            if (x + 1 < nx) visit(v + 1);
            if (y > 0) visit(v - nx);
            if (y + 1 < ny) visit(v + nx);
            if (z > 0) visit(v - nx * ny);
            if (z + 1 < nz) visit(v + nx * ny);
        }
        if (size > best_size) {
            best_size = size;
            best_label = current;
        }
    }
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = label[i] == best_label ? 1 : 0;
}

}  // namespace extent_detail

/// Otsu threshold of one 3D image followed by largest 6-connected component.
/// A constant positive image is a single class: everything is inside.
inline BrainExtent compute_brain_extent(const DWIVolume& vol, std::optional<std::size_t> gradient = std::nullopt)
{
    const std::size_t g = gradient.value_or(reference_gradient(vol));
    if (g >= vol.gradient_count()) {
        throw Error("gradient index " + std::to_string(g) + " out of range for volume '" + vol.id() + "'");
    }
    const std::size_t n = vol.voxels_per_gradient();
    const float* img = vol.data().data() + g * n;

    BrainExtent ext;
    ext.nx = vol.nx();
    ext.ny = vol.ny();
    ext.nz = vol.nz();
    ext.mask.assign(n, 0);

    const auto [lo, hi] = std::minmax_element(img, img + n);
    if (*hi <= 0.0f) throw Error("empty brain extent: volume '" + vol.id() + "' has no positive signal");
    if (*lo == *hi) {
        std::fill(ext.mask.begin(), ext.mask.end(), std::uint8_t{1});
    } else {
        const double thr = otsu_threshold(img, n);
        for (std::size_t i = 0; i < n; ++i) ext.mask[i] = img[i] > thr ? 1 : 0;
        extent_detail::keep_largest_component(ext.mask, ext.nx, ext.ny, ext.nz);
    }

    IndexRange bx{std::numeric_limits<int>::max(), -1}, by = bx, bz = bx;
    for (std::size_t z = 0; z < ext.nz; ++z)
        for (std::size_t y = 0; y < ext.ny; ++y)
            for (std::size_t x = 0; x < ext.nx; ++x) {
                if (!ext.inside(x, y, z)) continue;
                bx.lo = std::min(bx.lo, static_cast<int>(x));
                bx.hi = std::max(bx.hi, static_cast<int>(x));
                by.lo = std::min(by.lo, static_cast<int>(y));
                by.hi = std::max(by.hi, static_cast<int>(y));
                bz.lo = std::min(bz.lo, static_cast<int>(z));
                bz.hi = std::max(bz.hi, static_cast<int>(z));
            }
    if (bx.hi < 0) throw Error("empty brain extent for volume '" + vol.id() + "'");
    ext.bbox = {bx, by, bz};
    return ext;
}

}  // namespace dwiqc
