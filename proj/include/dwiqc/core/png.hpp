#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <png.h>

#include "dwiqc/core/error.hpp"
#include "dwiqc/core/image.hpp"

namespace dwiqc {

/// Min-max scale to 8 bits; constant images map to 0.
inline std::vector<std::uint8_t> to_gray8(const Image& img)
{
    std::vector<std::uint8_t> out(img.size(), 0);
    if (img.empty()) return out;
    const auto [lo, hi] = std::minmax_element(img.pixels().begin(), img.pixels().end());
    const double range = *hi - *lo;
    if (range <= 0.0) return out;
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double v = (img.pixels()[i] - *lo) / range * 255.0;
        out[i] = static_cast<std::uint8_t>(std::clamp(v + 0.5, 0.0, 255.0));
    }
    return out;
}

/// Writes an 8-bit grayscale PNG.
inline void write_png_gray8(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                            const std::vector<std::uint8_t>& pixels)
{
    if (pixels.size() != rows * cols) throw Error("png: pixel buffer size mismatch");
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(cols);
    image.height = static_cast<png_uint_32>(rows);
    image.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, pixels.data(),
                                 static_cast<png_int_32>(cols), nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw Error("png: cannot write '" + path.string() + "': " + msg);
    }
}

inline void write_png(const std::filesystem::path& path, const Image& img)
{
    write_png_gray8(path, img.rows(), img.cols(), to_gray8(img));
}

struct Gray8Image {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> pixels;
};

inline Gray8Image read_png_gray8(const std::filesystem::path& path)
{
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
        throw Error("png: cannot read '" + path.string() + "': " + image.message);
    }
    image.format = PNG_FORMAT_GRAY;
    Gray8Image out;
    out.rows = image.height;
    out.cols = image.width;
    out.pixels.resize(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw Error("png: decode failed for '" + path.string() + "': " + msg);
    }
    return out;
}

}  // namespace dwiqc
