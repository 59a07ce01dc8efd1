#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dwiqc/core/error.hpp"

namespace dwiqc {

/// Row-major 2D real image.
class Image {
public:
    Image() = default;
    Image(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Image(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data))
    {
        if (data_.size() != rows_ * cols_) {
            throw Error("image data size does not match shape");
        }
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> pixels() noexcept { return data_; }
    std::span<const double> pixels() const noexcept { return data_; }
    const std::vector<double>& vector() const noexcept { return data_; }

    bool same_shape(const Image& other) const noexcept
    {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Largest absolute pixel difference; shapes must agree.
inline double max_abs_diff(const Image& a, const Image& b)
{
    if (!a.same_shape(b)) {
        throw Error("max_abs_diff: shape mismatch");
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a.pixels()[i] - b.pixels()[i]));
    }
    return m;
}

inline bool all_finite(const Image& img)
{
    for (double v : img.pixels()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

enum class View { axial, sagittal };

inline std::string_view to_string(View v)
{
    return v == View::axial ? "axial" : "sagittal";
}

inline View parse_view(std::string_view s)
{
    if (s == "axial") return View::axial;
    if (s == "sagittal") return View::sagittal;
    throw ConfigError("unknown view '" + std::string(s) + "' (expected axial or sagittal)");
}

enum class Label : int { artifact_free = 0, artifactual = 1 };

inline int to_int(Label l) { return static_cast<int>(l); }

inline Label label_from_int(int v)
{
    if (v == 0) return Label::artifact_free;
    if (v == 1) return Label::artifactual;
    throw Error("label must be 0 or 1, got " + std::to_string(v));
}

/// One 2D slice cut from a diffusion volume.
struct SliceSample {
    std::string volume_id;
    View view = View::axial;
    int gradient_index = 0;
    int slice_index = 0;
    Image pixels;
    std::optional<Label> label;
    /// Set for augmented copies: which replicate of the source slice.
    std::optional<int> augmentation;

    /// Stable identifier, unique within a dataset.
    std::string key() const
    {
        std::string k = volume_id + ":" + std::string(to_string(view)) + ":" +
                        std::to_string(gradient_index) + ":" + std::to_string(slice_index);
        if (augmentation) k += "#aug" + std::to_string(*augmentation);
        return k;
    }

    /// Key of the originating slice (augmentation suffix dropped).
    std::string source_key() const
    {
        return volume_id + ":" + std::string(to_string(view)) + ":" +
               std::to_string(gradient_index) + ":" + std::to_string(slice_index);
    }
};

}  // namespace dwiqc
