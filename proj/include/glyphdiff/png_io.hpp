// Copyright (c) 2026 The glyphdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "glyphdiff/errors.hpp"
#include "glyphdiff/image.hpp"

// 8-bit grayscale PNG read/write via libpng. Encoder settings are pinned
// (compression level 6, no filtering, no ancillary chunks, no interlace)
// so identical pixels produce identical bytes, which the reproducibility
// contract of every CLI command relies on.

namespace glyphdiff {

namespace pngdetail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] inline void png_error_thrower(png_structp png, png_const_charp msg) {
    (void)png;
    throw DataError(std::string("png: ") + msg);
}

inline void png_warning_sink(png_structp, png_const_charp) {}

}  // namespace pngdetail

inline void write_png_gray8(const std::string& path, const std::vector<uint8_t>& pixels, int width,
                            int height) {
    if (pixels.size() != static_cast<size_t>(width) * height) throw UsageError("write_png_gray8: size mismatch");
    pngdetail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError("cannot open for writing: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                              pngdetail::png_error_thrower, pngdetail::png_warning_sink);
    if (!png) throw DataError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("png_create_info_struct failed");
    }
    try {
        png_init_io(png, fp.get());
        png_set_compression_level(png, 6);
        png_set_filter(png, 0, PNG_FILTER_NONE);
        png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                     PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                     PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        std::vector<png_bytep> rows(static_cast<size_t>(height));
        for (int y = 0; y < height; ++y)
            rows[static_cast<size_t>(y)] = const_cast<png_bytep>(pixels.data() + static_cast<size_t>(y) * width);
        png_write_image(png, rows.data());
        png_write_end(png, nullptr);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
    png_destroy_write_struct(&png, &info);
}

struct GrayPng {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> pixels;
};

/// Reads any PNG down to 8-bit grayscale (color converted, alpha composited
/// over white, 16-bit stripped).
inline GrayPng read_png_gray8(const std::string& path) {
    pngdetail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("cannot open for reading: " + path);
    uint8_t sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
        throw DataError("not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                             pngdetail::png_error_thrower, pngdetail::png_warning_sink);
    if (!png) throw DataError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("png_create_info_struct failed");
    }
    GrayPng out;
    try {
        png_init_io(png, fp.get());
        png_set_sig_bytes(png, 8);
        png_read_info(png, info);

        const png_byte color = png_get_color_type(png, info);
        const png_byte depth = png_get_bit_depth(png, info);
        if (depth == 16) png_set_strip_16(png);
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
        if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
        if (color & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray(png, 1, -1.0, -1.0);
        if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) {
            png_color_16 white{0, 0xff, 0xff, 0xff, 0xff};
            png_set_background(png, &white, PNG_BACKGROUND_GAMMA_SCREEN, 0, 1.0);
        }
        png_read_update_info(png, info);

        out.width = static_cast<int>(png_get_image_width(png, info));
        out.height = static_cast<int>(png_get_image_height(png, info));
        const size_t rowbytes = png_get_rowbytes(png, info);
        if (rowbytes != static_cast<size_t>(out.width))
            throw DataError("png: unexpected row size after grayscale conversion in " + path);
        out.pixels.resize(static_cast<size_t>(out.width) * out.height);
        std::vector<png_bytep> rows(static_cast<size_t>(out.height));
        for (int y = 0; y < out.height; ++y)
            rows[static_cast<size_t>(y)] = out.pixels.data() + static_cast<size_t>(y) * out.width;
        png_read_image(png, rows.data());
        png_read_end(png, nullptr);
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

inline void write_glyph_png(const std::string& path, const GlyphImage& img) {
    write_png_gray8(path, image_to_bytes(img), img.width, img.height);
}

inline GlyphImage read_glyph_png(const std::string& path) {
    const GrayPng p = read_png_gray8(path);
    return image_from_bytes(p.width, p.height, p.pixels);
}

}  // namespace glyphdiff
