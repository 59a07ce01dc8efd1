#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include "dwiqc/core/error.hpp"
#include "dwiqc/core/extent.hpp"
#include "dwiqc/core/image.hpp"
#include "dwiqc/core/volume.hpp"

namespace dwiqc {

/// Which peripheral slices are excluded from labeling and scoring.
struct ExclusionRule {
    int sagittal_edge_trim = 5;
    int axial_top_trim = 5;
    bool drop_outside_brain = true;

    void validate() const
    {
        if (sagittal_edge_trim < 0 || axial_top_trim < 0) throw ConfigError("exclusion trims must be >= 0");
    }
};

/// Kept slice interval for a view. Sagittal keeps [x.lo + trim, x.hi - trim];
/// axial keeps [z.lo, z.hi - trim], i.e. everything below the superior
/// surface except its top `axial_top_trim` slices.
inline IndexRange kept_range(View view, const BrainExtent& extent, const ExclusionRule& rule)
{
    rule.validate();
    IndexRange out;
    if (view == View::sagittal) {
        IndexRange span = rule.drop_outside_brain ? extent.bbox[0]
                                                   : IndexRange{0, static_cast<int>(extent.nx) - 1};
        out = {span.lo + rule.sagittal_edge_trim, span.hi - rule.sagittal_edge_trim};
    } else {
        IndexRange span = rule.drop_outside_brain ? extent.bbox[2]
                                                   : IndexRange{0, static_cast<int>(extent.nz) - 1};
        out = {span.lo, span.hi - rule.axial_top_trim};
    }
    if (out.empty()) {
        throw Error(std::string("exclusion rule leaves no ") + std::string(to_string(view)) + " slices (kept range [" +
                    std::to_string(out.lo) + ", " + std::to_string(out.hi) + "])");
    }
    return out;
}

inline std::vector<int> kept_indices(View view, const BrainExtent& extent, const ExclusionRule& rule)
{
    const IndexRange r = kept_range(view, extent, rule);
    std::vector<int> out(static_cast<std::size_t>(r.count()));
    std::iota(out.begin(), out.end(), r.lo);
    return out;
}

/// One sample per (kept slice, gradient), ordered by gradient then index.
inline std::vector<SliceSample> extract_slices(const DWIVolume& vol, View view, const BrainExtent& extent,
                                               const ExclusionRule& rule)
{
    const auto indices = kept_indices(view, extent, rule);
    std::vector<SliceSample> out;
    out.reserve(indices.size() * vol.gradient_count());
    for (std::size_t g = 0; g < vol.gradient_count(); ++g) {
        for (int idx : indices) {
            SliceSample s;
            s.volume_id = vol.id();
            s.view = view;
            s.gradient_index = static_cast<int>(g);
            s.slice_index = idx;
            s.pixels = vol.slice(view, static_cast<std::size_t>(idx), g);
            out.push_back(std::move(s));
        }
    }
    return out;
}

inline constexpr double constant_slice_std_floor = 1e-8;

/// (x - mean) / std with the population std; near-constant images map to zeros.
inline Image normalize_image(const Image& img)
{
    if (img.empty()) return img;
    const double n = static_cast<double>(img.size());
    double mean = 0.0;
    for (double v : img.pixels()) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : img.pixels()) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / n);
    Image out(img.rows(), img.cols());
    if (sd < constant_slice_std_floor) return out;
    for (std::size_t i = 0; i < img.size(); ++i) out.pixels()[i] = (img.pixels()[i] - mean) / sd;
    return out;
}

inline SliceSample normalize_slice(SliceSample slice)
{
    slice.pixels = normalize_image(slice.pixels);
    return slice;
}

/// Corner-aligned bilinear resize: output corners sample input corners exactly.
inline Image resize_bilinear(const Image& src, std::size_t rows, std::size_t cols)
{
    if (rows == 0 || cols == 0) throw Error("resize target must be positive");
    if (src.empty()) throw Error("cannot resize an empty image");
    if (src.rows() == rows && src.cols() == cols) return src;
    auto coord = [](std::size_t i, std::size_t src_n, std::size_t dst_n) {
        if (dst_n == 1) return (static_cast<double>(src_n) - 1.0) / 2.0;
        return static_cast<double>(i * (src_n - 1)) / static_cast<double>(dst_n - 1);
    };
    Image out(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        const double sr = coord(r, src.rows(), rows);
        const std::size_t r0 = std::min(static_cast<std::size_t>(sr), src.rows() - 1);
        const std::size_t r1 = std::min(r0 + 1, src.rows() - 1);
        const double fr = sr - static_cast<double>(r0);
        for (std::size_t c = 0; c < cols; ++c) {
            const double sc = coord(c, src.cols(), cols);
            const std::size_t c0 = std::min(static_cast<std::size_t>(sc), src.cols() - 1);
            const std::size_t c1 = std::min(c0 + 1, src.cols() - 1);
            const double fc = sc - static_cast<double>(c0);
            const double top = src(r0, c0) * (1.0 - fc) + src(r0, c1) * fc;
            const double bottom = src(r1, c0) * (1.0 - fc) + src(r1, c1) * fc;
            out(r, c) = fr == 0.0 ? top : top * (1.0 - fr) + bottom * fr;
        }
    }
    return out;
}

/// Classifier input: the slice resized to the backbone geometry (no crop or pad).
inline Image prepare_input(const SliceSample& slice, std::size_t rows, std::size_t cols)
{
    return resize_bilinear(slice.pixels, rows, cols);
}

}  // namespace dwiqc
