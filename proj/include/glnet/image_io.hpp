#pragma once

#include "glnet/tensor.hpp"

#include <png.h>

#include <cstdio>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace glnet::io {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept
    {
        if (f)
            std::fclose(f);
    }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] inline void png_fail(png_structp png, png_const_charp msg)
{
    (void)png;
    throw std::runtime_error(msg);
}

inline void png_warn(png_structp, png_const_charp) {}

} // namespace detail

// Reads an 8-bit PNG. Gray/palette/alpha inputs are converted; `channels`
// selects 1 (masks, gray) or 3 (RGB) output planes.
inline Raster<std::uint8_t> read_png(const std::filesystem::path& path, int channels)
{
    detail::File fp(std::fopen(path.c_str(), "rb"));
    if (!fp)
        throw std::runtime_error("cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_fail, detail::png_warn);
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp& p;
        png_infop& i;
        ~Guard() { png_destroy_read_struct(&p, &i, nullptr); }
    } guard{png, info};
    try {
        png_init_io(png, fp.get());
        png_read_info(png, info);
        const int color = png_get_color_type(png, info);
        const int depth = png_get_bit_depth(png, info);
        if (depth == 16)
            png_set_strip_16(png);
        if (color == PNG_COLOR_TYPE_PALETTE)
            png_set_palette_to_rgb(png);
        if ((color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) && depth < 8)
            png_set_expand_gray_1_2_4_to_8(png);
        if (color & PNG_COLOR_MASK_ALPHA)
            png_set_strip_alpha(png);
        const bool is_gray = color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA;
        if (channels == 3 && is_gray)
            png_set_gray_to_rgb(png);
        if (channels == 1 && !is_gray)
            throw std::runtime_error("expected single-channel PNG: " + path.string());
        png_read_update_info(png, info);
        const int w = static_cast<int>(png_get_image_width(png, info));
        const int h = static_cast<int>(png_get_image_height(png, info));
        const int file_ch = png_get_channels(png, info);
        std::vector<png_byte> buf(static_cast<std::size_t>(w) * h * file_ch);
        std::vector<png_bytep> rows(h);
        for (int y = 0; y < h; ++y)
            rows[y] = buf.data() + static_cast<std::size_t>(y) * w * file_ch;
        png_read_image(png, rows.data());
        Raster<std::uint8_t> out(channels, h, w);
        for (int c = 0; c < channels; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    out(c, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * file_ch + c];
        return out;
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

inline Image read_image(const std::filesystem::path& p) { return read_png(p, 3); }
inline Mask read_mask(const std::filesystem::path& p) { return read_png(p, 1); }

// Writes 1- or 3-plane 8-bit data as PNG. Output bytes depend only on the
// pixel data (no timestamps or text chunks).
inline void write_png(const std::filesystem::path& path, const Raster<std::uint8_t>& img)
{
    if (img.channels() != 1 && img.channels() != 3)
        throw std::invalid_argument("PNG writer supports 1 or 3 channels");
    detail::File fp(std::fopen(path.c_str(), "wb"));
    if (!fp)
        throw std::runtime_error("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, detail::png_fail, detail::png_warn);
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp& p;
        png_infop& i;
        ~Guard() { png_destroy_write_struct(&p, &i); }
    } guard{png, info};
    const int w = img.width(), h = img.height(), ch = img.channels();
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, w, h, 8, ch == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<std::size_t>(w) * ch);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c)
                row[static_cast<std::size_t>(x) * ch + c] = img(c, y, x);
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
}

} // namespace glnet::io
