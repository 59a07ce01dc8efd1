#pragma once

#include <complex>
#include <cstddef>
#include <map>
#include <mutex>
#include <tuple>
#include <vector>

#include <fftw3.h>

#include "dwiqc/core/error.hpp"
#include "dwiqc/core/image.hpp"

namespace dwiqc {

using ComplexGrid = std::vector<std::complex<double>>;

namespace detail {

// FFTW planning is not thread-safe, execution with new-array calls is.
// Plans are created once per (rows, cols, direction) under a lock and
// reused; FFTW_UNALIGNED lets them run on any std::vector buffer.
class FftPlanCache {
public:
    static FftPlanCache& instance()
    {
        static FftPlanCache cache;
        return cache;
    }

    fftw_plan get(std::size_t rows, std::size_t cols, int sign)
    {
        std::lock_guard lock(mutex_);
        const auto key = std::make_tuple(rows, cols, sign);
        if (auto it = plans_.find(key); it != plans_.end()) return it->second;
        ComplexGrid scratch(rows * cols);
        auto* p = reinterpret_cast<fftw_complex*>(scratch.data());
        fftw_plan plan = fftw_plan_dft_2d(static_cast<int>(rows), static_cast<int>(cols), p, p, sign,
                                          FFTW_ESTIMATE | FFTW_UNALIGNED);
        if (!plan) throw Error("fftw: planning failed");
        plans_.emplace(key, plan);
        return plan;
    }

    FftPlanCache(const FftPlanCache&) = delete;
    FftPlanCache& operator=(const FftPlanCache&) = delete;

private:
    FftPlanCache() = default;
    ~FftPlanCache()
    {
        for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
    }

    std::mutex mutex_;
    std::map<std::tuple<std::size_t, std::size_t, int>, fftw_plan> plans_;
};

}  // namespace detail

/// In-place unnormalized forward 2D DFT of a row-major grid.
inline void fft2_forward(ComplexGrid& grid, std::size_t rows, std::size_t cols)
{
    if (grid.size() != rows * cols) throw Error("fft2: grid size mismatch");
    auto plan = detail::FftPlanCache::instance().get(rows, cols, FFTW_FORWARD);
    auto* p = reinterpret_cast<fftw_complex*>(grid.data());
    fftw_execute_dft(plan, p, p);
}

/// In-place inverse 2D DFT, scaled by 1/(rows*cols) so it undoes fft2_forward.
inline void fft2_inverse(ComplexGrid& grid, std::size_t rows, std::size_t cols)
{
    if (grid.size() != rows * cols) throw Error("fft2: grid size mismatch");
    auto plan = detail::FftPlanCache::instance().get(rows, cols, FFTW_BACKWARD);
    auto* p = reinterpret_cast<fftw_complex*>(grid.data());
    fftw_execute_dft(plan, p, p);
    const double scale = 1.0 / static_cast<double>(rows * cols);
    for (auto& v : grid) v *= scale;
}

inline ComplexGrid to_kspace(const Image& img)
{
    ComplexGrid grid(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) grid[i] = img.pixels()[i];
    fft2_forward(grid, img.rows(), img.cols());
    return grid;
}

/// Inverse transform, keeping the real part.
inline Image from_kspace(ComplexGrid grid, std::size_t rows, std::size_t cols)
{
    fft2_inverse(grid, rows, cols);
    Image out(rows, cols);
    for (std::size_t i = 0; i < grid.size(); ++i) out.pixels()[i] = grid[i].real();
    return out;
}

/// Smallest n' >= n whose prime factors are all in {2, 3, 5, 7}.
inline std::size_t next_fast_fft_size(std::size_t n)
{
    for (std::size_t m = std::max<std::size_t>(n, 1);; ++m) {
        std::size_t r = m;
        for (std::size_t p : {2, 3, 5, 7}) {
            while (r % p == 0) r /= p;
        }
        if (r == 1) return m;
    }
}

}  // namespace dwiqc
