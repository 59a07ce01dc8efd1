#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "dwiqc/core/nifti.hpp"
#include "dwiqc/core/parallel.hpp"
#include "dwiqc/core/rng.hpp"
#include "dwiqc/core/volume.hpp"

namespace dwiqc {

/// Geometry and contrast of the synthetic head phantoms used as clean input.
struct PhantomConfig {
    std::size_t nx = 64;
    std::size_t ny = 64;
    std::size_t nz = 40;
    std::size_t gradients = 3;  // gradient 0 is b=0
    std::array<double, 3> voxel_mm{3.0, 3.0, 3.0};
    double b_value = 1000.0;
    double noise_sigma = 0.015;  // relative to tissue signal
    double head_scale_min = 0.85;
    double head_scale_max = 1.0;
};

/// Layered ellipsoidal head: bright scalp rim, dark skull, textured brain
/// with ventricles. Diffusion-weighted gradients attenuate tissue with a
/// direction-dependent factor and suppress CSF. Additive Gaussian noise.
inline DWIVolume make_phantom(const PhantomConfig& cfg, const std::string& id, std::uint64_t seed)
{
    Rng rng(seed);
    DWIVolume vol(id, cfg.nx, cfg.ny, cfg.nz, cfg.gradients);
    vol.set_voxel_size(cfg.voxel_mm);
    Eigen::Matrix4d affine = Eigen::Matrix4d::Identity();
    for (int i = 0; i < 3; ++i) {
        affine(i, i) = cfg.voxel_mm[static_cast<std::size_t>(i)];
        affine(i, 3) = -0.5 * cfg.voxel_mm[static_cast<std::size_t>(i)] *
                       static_cast<double>(i == 0 ? cfg.nx : (i == 1 ? cfg.ny : cfg.nz));
    }
    vol.set_affine(affine);

    const double scale = rng.uniform(cfg.head_scale_min, cfg.head_scale_max);
    const double ax = 0.80 * scale, ay = 0.90 * scale, az = 0.80 * scale;
    const double cx = rng.uniform(-0.04, 0.04), cy = rng.uniform(-0.04, 0.04);
    const double cz = rng.uniform(-0.12, -0.05);
    const double tilt = rng.uniform(-0.14, 0.14);
    const double intensity = rng.uniform(800.0, 1200.0);
    const double ventricle_size = rng.uniform(0.8, 1.2);

    struct Wave {
        double kx, ky, kz, phase, amp;
    };
    std::vector<Wave> texture(8);
    for (auto& w : texture) {
        w = {rng.uniform(-9.0, 9.0), rng.uniform(-9.0, 9.0), rng.uniform(-6.0, 6.0),
             rng.uniform(0.0, 2.0 * std::numbers::pi), rng.uniform(0.015, 0.04)};
    }
    std::vector<double> grad_angle(cfg.gradients), grad_att(cfg.gradients);
    for (std::size_t g = 0; g < cfg.gradients; ++g) {
        grad_angle[g] = rng.uniform(0.0, std::numbers::pi);
        grad_att[g] = rng.uniform(0.35, 0.5);
    }

    const double ct = std::cos(tilt), st = std::sin(tilt);
    for (std::size_t z = 0; z < cfg.nz; ++z) {
        for (std::size_t y = 0; y < cfg.ny; ++y) {
            for (std::size_t x = 0; x < cfg.nx; ++x) {
                const double u0 = (static_cast<double>(x) + 0.5) / (cfg.nx / 2.0) - 1.0 - cx;
                const double v0 = (static_cast<double>(y) + 0.5) / (cfg.ny / 2.0) - 1.0 - cy;
                const double w = (static_cast<double>(z) + 0.5) / (cfg.nz / 2.0) - 1.0 - cz;
                const double u = ct * u0 - st * v0;
                const double v = st * u0 + ct * v0;
                const double r = std::sqrt((u / ax) * (u / ax) + (v / ay) * (v / ay) + (w / az) * (w / az));

                double tissue = 0.0, csf = 0.0, fat = 0.0;
                if (r <= 1.0 && r > 0.9) {
                    fat = 0.95;
                } else if (r <= 0.9 && r > 0.82) {
                    tissue = 0.06;
                } else if (r <= 0.82) {
                    tissue = r < 0.55 ? 0.5 : 0.62;
                    for (const auto& t : texture) {
                        tissue += t.amp * std::cos(t.kx * u + t.ky * v + t.kz * w + t.phase);
                    }
                    for (double side : {-1.0, 1.0}) {
                        const double du = (u - side * 0.13 * scale) / (0.07 * ventricle_size * scale);
                        const double dv = (v + 0.05 * scale) / (0.28 * ventricle_size * scale);
                        const double dw = (w - 0.08) / (0.18 * ventricle_size * scale);
                        if (du * du + dv * dv + dw * dw <= 1.0) {
                            csf = 1.0;
                            tissue = 0.0;
                        }
                    }
                }
                const double fiber = std::atan2(v, u);
                for (std::size_t g = 0; g < cfg.gradients; ++g) {
                    double s;
                    if (g == 0) {
                        s = tissue + csf + fat;
                    } else {
                        const double aniso = 1.0 + 0.25 * std::cos(2.0 * (fiber - grad_angle[g]));
                        s = tissue * grad_att[g] * aniso + csf * 0.06 + fat * 0.2;
                    }
                    s += cfg.noise_sigma * rng.normal();
                    vol.at(x, y, z, g) = static_cast<float>(s * intensity);
                }
            }
        }
    }
    std::vector<double> bvals(cfg.gradients, cfg.b_value);
    bvals[0] = 0.0;
    vol.set_bvals(std::move(bvals));
    return vol;
}

inline std::string phantom_id(std::size_t i)
{
    std::string n = std::to_string(i);
    return "phantom_" + std::string(n.size() < 3 ? 3 - n.size() : 0, '0') + n;
}

/// Writes `count` phantoms (`phantom_NNN.nii.gz` + `.bval`) into `out_dir`.
inline std::vector<std::filesystem::path> write_phantom_set(const std::filesystem::path& out_dir, std::size_t count,
                                                            const PhantomConfig& cfg, std::uint64_t seed)
{
    std::filesystem::create_directories(out_dir);
    std::vector<std::filesystem::path> paths(count);
    parallel_for(count, [&](std::size_t i) {
        const std::string id = phantom_id(i);
        const auto vol = make_phantom(cfg, id, stream_seed(seed, id));
        paths[i] = out_dir / (id + ".nii.gz");
        save_dwi(vol, paths[i]);
        std::ofstream bval(out_dir / (id + ".bval"));
        for (std::size_t g = 0; g < vol.bvals().size(); ++g) bval << (g ? " " : "") << vol.bvals()[g];
        bval << "\n";
    });
    return paths;
}

}  // namespace dwiqc
