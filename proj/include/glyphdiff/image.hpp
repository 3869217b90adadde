// Copyright (c) 2026 The glyphdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "glyphdiff/errors.hpp"
#include "glyphdiff/tensor.hpp"

namespace glyphdiff {

/// Square grayscale raster of one character, values in [-1, 1] for dataset
/// images (dark ink negative, light ground positive). Model outputs may
/// transiently leave the range; clamping happens only at export.
struct GlyphImage {
    int width = 0;
    int height = 0;
    std::vector<float> values;

    GlyphImage() = default;
    GlyphImage(int w, int h) : width(w), height(h), values(static_cast<size_t>(w) * h, 1.0f) {}

    int64_t numel() const { return static_cast<int64_t>(values.size()); }
    float& at(int y, int x) { return values[static_cast<size_t>(y) * width + x]; }
    float at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }

    bool in_range() const {
        for (float v : values)
            if (!std::isfinite(v) || v < -1.0f || v > 1.0f) return false;
        return true;
    }

    Tensor32 to_tensor() const {
        Tensor32 t({1, 1, height, width});
        std::copy(values.begin(), values.end(), t.data.begin());
        return t;
    }

    static GlyphImage from_tensor(const Tensor32& t) {
        if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 1)
            throw UsageError("from_tensor expects shape [1,1,H,W], got " + shape_str(t.shape));
        GlyphImage img(static_cast<int>(t.dim(3)), static_cast<int>(t.dim(2)));
        std::copy(t.data.begin(), t.data.end(), img.values.begin());
        return img;
    }
};

/// [0,255] byte -> [-1,1] float, linear.
inline float pixel_to_unit(uint8_t p) { return static_cast<float>(p) / 127.5f - 1.0f; }

/// [-1,1] float -> [0,255] byte; clamps first, so export never wraps.
inline uint8_t unit_to_pixel(float v) {
    const float c = std::clamp(v, -1.0f, 1.0f);
    const float scaled = (c + 1.0f) * 127.5f;
    const int q = static_cast<int>(std::lround(scaled));
    return static_cast<uint8_t>(std::clamp(q, 0, 255));
}

inline std::vector<uint8_t> image_to_bytes(const GlyphImage& img) {
    std::vector<uint8_t> out(img.values.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = unit_to_pixel(img.values[i]);
    return out;
}

inline GlyphImage image_from_bytes(int width, int height, const std::vector<uint8_t>& bytes) {
    if (bytes.size() != static_cast<size_t>(width) * height)
        throw DataError("pixel buffer size does not match dimensions");
    GlyphImage img(width, height);
    for (size_t i = 0; i < bytes.size(); ++i) img.values[i] = pixel_to_unit(bytes[i]);
    return img;
}

inline void clamp_unit_(GlyphImage& img) {
    for (auto& v : img.values) v = std::clamp(v, -1.0f, 1.0f);
}

/// Lays cells out left-to-right, wrapping after `columns`. Each cell
/// occupies (cell + pad) pixels per axis with the pad margin on the
/// right/bottom, so a row of n cells is exactly n*(cell+pad) wide.
inline GlyphImage compose_grid(const std::vector<GlyphImage>& cells, int columns, int pad = 2) {
    if (cells.empty()) throw UsageError("compose_grid: no cells");
    if (columns < 1) throw UsageError("compose_grid: columns must be >= 1");
    const int cell = cells[0].width;
    for (const auto& c : cells)
        if (c.width != cell || c.height != cell) throw UsageError("compose_grid: cells must be uniform squares");

    const int n = static_cast<int>(cells.size());
    const int cols = std::min(columns, n);
    const int rows = (n + cols - 1) / cols;
    GlyphImage grid(cols * (cell + pad), rows * (cell + pad));
    std::fill(grid.values.begin(), grid.values.end(), 1.0f);
    for (int i = 0; i < n; ++i) {
        const int r = i / cols;
        const int c = i % cols;
        const int oy = r * (cell + pad);
        const int ox = c * (cell + pad);
        for (int y = 0; y < cell; ++y)
            for (int x = 0; x < cell; ++x) grid.at(oy + y, ox + x) = cells[static_cast<size_t>(i)].at(y, x);
    }
    return grid;
}

}  // namespace glyphdiff
