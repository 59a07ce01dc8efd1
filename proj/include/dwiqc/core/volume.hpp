#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dwiqc/core/error.hpp"
#include "dwiqc/core/image.hpp"

namespace dwiqc {

/// 4D diffusion acquisition, x fastest then y, z, gradient (NIfTI order).
class DWIVolume {
public:
    DWIVolume() = default;

    DWIVolume(std::string id, std::size_t nx, std::size_t ny, std::size_t nz, std::size_t ng,
              float fill = 0.0f)
        : id_(std::move(id)), dims_{nx, ny, nz, ng}, data_(nx * ny * nz * ng, fill)
    {
        if (nx == 0 || ny == 0 || nz == 0 || ng == 0) {
            throw Error("volume dimensions must all be >= 1");
        }
        affine_.setIdentity();
    }

    const std::string& id() const noexcept { return id_; }
    void set_id(std::string id) { id_ = std::move(id); }

    std::size_t nx() const noexcept { return dims_[0]; }
    std::size_t ny() const noexcept { return dims_[1]; }
    std::size_t nz() const noexcept { return dims_[2]; }
    std::size_t gradient_count() const noexcept { return dims_[3]; }
    const std::array<std::size_t, 4>& dims() const noexcept { return dims_; }
    std::size_t voxels_per_gradient() const noexcept { return dims_[0] * dims_[1] * dims_[2]; }

    std::size_t index(std::size_t x, std::size_t y, std::size_t z, std::size_t g) const noexcept
    {
        return x + dims_[0] * (y + dims_[1] * (z + dims_[2] * g));
    }

    float& at(std::size_t x, std::size_t y, std::size_t z, std::size_t g) noexcept
    {
        return data_[index(x, y, z, g)];
    }
    float at(std::size_t x, std::size_t y, std::size_t z, std::size_t g) const noexcept
    {
        return data_[index(x, y, z, g)];
    }

    std::vector<float>& data() noexcept { return data_; }
    const std::vector<float>& data() const noexcept { return data_; }

    const std::array<double, 3>& voxel_size() const noexcept { return voxel_size_; }
    void set_voxel_size(const std::array<double, 3>& v) { voxel_size_ = v; }

    const Eigen::Matrix4d& affine() const noexcept { return affine_; }
    void set_affine(const Eigen::Matrix4d& a) { affine_ = a; }

    /// b-values from a sibling .bval file, when one was found at load time.
    const std::vector<double>& bvals() const noexcept { return bvals_; }
    void set_bvals(std::vector<double> b) { bvals_ = std::move(b); }

    /// Throws unless dimensions, finiteness and affine invertibility hold.
    void validate() const
    {
        for (auto d : dims_) {
            if (d == 0) throw Error("volume '" + id_ + "' has a zero dimension");
        }
        std::size_t bad = 0;
        for (float v : data_) {
            if (!std::isfinite(v)) ++bad;
        }
        if (bad > 0) {
            throw Error("volume '" + id_ + "' contains " + std::to_string(bad) + " non-finite voxels");
        }
        if (std::abs(affine_.determinant()) < 1e-12) {
            throw Error("volume '" + id_ + "' has a singular affine");
        }
    }

    /// Axial plane z of gradient g: rows follow y, columns follow x.
    Image axial_slice(std::size_t z, std::size_t g) const
    {
        Image out(ny(), nx());
        for (std::size_t y = 0; y < ny(); ++y)
            for (std::size_t x = 0; x < nx(); ++x) out(y, x) = at(x, y, z, g);
        return out;
    }

    void set_axial_slice(std::size_t z, std::size_t g, const Image& img)
    {
        if (img.rows() != ny() || img.cols() != nx()) throw Error("axial slice shape mismatch");
        for (std::size_t y = 0; y < ny(); ++y)
            for (std::size_t x = 0; x < nx(); ++x) at(x, y, z, g) = static_cast<float>(img(y, x));
    }

    /// Sagittal plane x of gradient g: rows follow z, columns follow y.
    Image sagittal_slice(std::size_t x, std::size_t g) const
    {
        Image out(nz(), ny());
        for (std::size_t z = 0; z < nz(); ++z)
            for (std::size_t y = 0; y < ny(); ++y) out(z, y) = at(x, y, z, g);
        return out;
    }

    Image slice(View view, std::size_t index, std::size_t g) const
    {
        return view == View::axial ? axial_slice(index, g) : sagittal_slice(index, g);
    }

    /// Number of slices along the axis a view cuts through.
    std::size_t slice_count(View view) const noexcept
    {
        return view == View::axial ? nz() : nx();
    }

private:
    std::string id_;
    std::array<std::size_t, 4> dims_{0, 0, 0, 0};
    std::vector<float> data_;
    std::array<double, 3> voxel_size_{1.0, 1.0, 1.0};
    Eigen::Matrix4d affine_ = Eigen::Matrix4d::Identity();
    std::vector<double> bvals_;
};

}  // namespace dwiqc
