#pragma once

#include <png.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dpn/error.hpp"

namespace dpn {

/// 8-bit interleaved raster with 1 (gray) or 3 (RGB) channels.
struct Image8 {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    std::vector<std::uint8_t> pixels;
};

/// Reads an 8-bit gray or RGB PNG without conversion. Alpha, 16-bit and
/// gray+alpha files are rejected rather than silently flattened.
inline Image8 read_png(const std::filesystem::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str()))
        throw IoError(path.string() + ": cannot decode PNG: " + img.message);
    const auto fmt = img.format;
    auto reject = [&](const char* why) {
        png_image_free(&img);
        throw IoError(path.string() + ": " + why);
    };
    if (fmt & PNG_FORMAT_FLAG_ALPHA) reject("PNG has an alpha channel; expected 8-bit RGB or grayscale");
    if (fmt & PNG_FORMAT_FLAG_LINEAR) reject("PNG is 16-bit; expected 8 bits per sample");
    Image8 out;
    out.width = img.width;
    out.height = img.height;
    out.channels = (fmt & PNG_FORMAT_FLAG_COLOR) ? 3 : 1;
    img.format = out.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    out.pixels.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr))
        throw IoError(path.string() + ": PNG decode failed: " + img.message);
    return out;
}

inline void write_png(const std::filesystem::path& path, const Image8& im) {
    if (im.channels != 1 && im.channels != 3) throw ValueError("write_png: only 1 or 3 channels supported");
    if (im.pixels.size() != im.width * im.height * im.channels) throw ValueError("write_png: pixel buffer size mismatch");
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(im.width);
    img.height = static_cast<png_uint_32>(im.height);
    img.format = im.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&img, path.string().c_str(), 0, im.pixels.data(), 0, nullptr))
        throw IoError(path.string() + ": cannot write PNG: " + img.message);
}

} // namespace dpn
