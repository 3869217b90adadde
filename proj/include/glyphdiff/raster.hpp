// Copyright (c) 2026 The glyphdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "glyphdiff/font.hpp"
#include "glyphdiff/image.hpp"

// Anti-aliased scanline rasterizer using signed-area accumulation: each
// directed edge deposits fractional winding deltas into a cell buffer and a
// single running prefix sum turns them into coverage. Quadratics are
// flattened adaptively beforehand. Pure float math in a fixed order, so a
// given outline and transform always produces identical pixels.

namespace glyphdiff {

namespace rasterdetail {

struct Vec2 {
    float x = 0, y = 0;
};

class Accumulator {
public:
    Accumulator(int width, int height) : w_(width), h_(height), cells_(static_cast<size_t>((width + 1) * height), 0.f) {}

    void line(Vec2 p0, Vec2 p1) {
        if (p0.y == p1.y) return;
        float dir = 1.0f;
        if (p0.y > p1.y) {
            std::swap(p0, p1);
            dir = -1.0f;
        }
        const float dxdy = (p1.x - p0.x) / (p1.y - p0.y);
        float x = p0.x;
        const int y0 = std::max(0, static_cast<int>(std::floor(p0.y)));
        const int y_end = std::min(h_, static_cast<int>(std::ceil(p1.y)));
        if (static_cast<float>(y0) > p0.y) x += dxdy * (static_cast<float>(y0) - p0.y);
        for (int y = y0; y < y_end; ++y) {
            const int row = y * (w_ + 1);
            const float y_top = std::max(static_cast<float>(y), p0.y);
            const float y_bot = std::min(static_cast<float>(y + 1), p1.y);
            const float dy = y_bot - y_top;
            if (dy <= 0) continue;
            const float xnext = x + dxdy * dy;
            const float d = dy * dir;
            float x0 = x, x1 = xnext;
            if (x0 > x1) std::swap(x0, x1);
            x0 = std::clamp(x0, 0.0f, static_cast<float>(w_));
            x1 = std::clamp(x1, 0.0f, static_cast<float>(w_));
            const float x0floor = std::floor(x0);
            const int x0i = static_cast<int>(x0floor);
            const float x1ceil = std::ceil(x1);
            const int x1i = static_cast<int>(x1ceil);
            if (x1i <= x0i + 1) {
                // Whole span inside one cell column.
                const float xmf = 0.5f * (x0 + x1) - x0floor;
                cells_[static_cast<size_t>(row + x0i)] += d * (1.0f - xmf);
                cells_[static_cast<size_t>(row + x0i + 1)] += d * xmf;
            } else {
                const float s = 1.0f / (x1 - x0);
                const float x0f = x0 - x0floor;
                const float a0 = 0.5f * s * (1.0f - x0f) * (1.0f - x0f);
                const float x1f = x1 - x1ceil + 1.0f;
                const float am = 0.5f * s * x1f * x1f;
                cells_[static_cast<size_t>(row + x0i)] += d * a0;
                if (x1i == x0i + 2) {
                    cells_[static_cast<size_t>(row + x0i + 1)] += d * (1.0f - a0 - am);
                } else {
                    const float a1 = s * (1.5f - x0f);
                    cells_[static_cast<size_t>(row + x0i + 1)] += d * (a1 - a0);
                    for (int xi = x0i + 2; xi < x1i - 1; ++xi) cells_[static_cast<size_t>(row + xi)] += d * s;
                    const float a2 = a1 + static_cast<float>(x1i - x0i - 3) * s;
                    cells_[static_cast<size_t>(row + x1i - 1)] += d * (1.0f - a2 - am);
                }
                cells_[static_cast<size_t>(row + x1i)] += d * am;
            }
            x = xnext;
        }
    }

    /// Coverage per pixel, in [0,1].
    std::vector<float> coverage() const {
        std::vector<float> out(static_cast<size_t>(w_) * h_);
        for (int y = 0; y < h_; ++y) {
            float acc = 0.f;
            for (int x = 0; x <= w_; ++x) {
                acc += cells_[static_cast<size_t>(y * (w_ + 1) + x)];
                if (x < w_) out[static_cast<size_t>(y) * w_ + x] = std::min(1.0f, std::abs(acc));
            }
        }
        return out;
    }

private:
    int w_, h_;
    std::vector<float> cells_;
};

inline void flatten_quad(Accumulator& acc, Vec2 p0, Vec2 ctrl, Vec2 p1) {
    const float devx = p0.x - 2.0f * ctrl.x + p1.x;
    const float devy = p0.y - 2.0f * ctrl.y + p1.y;
    const float dev = std::sqrt(devx * devx + devy * devy);
    const int n = std::clamp(static_cast<int>(std::ceil(std::sqrt(dev * 4.0f))), 1, 24);
    Vec2 prev = p0;
    for (int i = 1; i <= n; ++i) {
        const float t = static_cast<float>(i) / static_cast<float>(n);
        const float u = 1.0f - t;
        Vec2 q{u * u * p0.x + 2 * u * t * ctrl.x + t * t * p1.x,
               u * u * p0.y + 2 * u * t * ctrl.y + t * t * p1.y};
        acc.line(prev, q);
        prev = q;
    }
}

}  // namespace rasterdetail

/// Maps font units to pixel space and renders anti-aliased coverage. The
/// transform is x_px = x_fu * scale + offset_x, y_px flipped so +y in font
/// space points up. Geometry outside the image is clamped to the border.
inline std::vector<float> rasterize_outline(const GlyphOutline& outline, int width, int height,
                                            float scale, float offset_x, float offset_y) {
    using rasterdetail::Vec2;
    rasterdetail::Accumulator acc(width, height);

    const auto to_px = [&](const GlyphPoint& p) {
        Vec2 v{p.x * scale + offset_x, static_cast<float>(height) - (p.y * scale + offset_y)};
        v.x = std::clamp(v.x, 0.0f, static_cast<float>(width));
        v.y = std::clamp(v.y, 0.0f, static_cast<float>(height));
        return v;
    };

    for (const auto& contour : outline.contours) {
        const size_t n = contour.size();
        if (n < 2) continue;
        // Establish a starting on-curve point (TrueType allows contours
        // that open off-curve; the implied midpoint rule fills the gap).
        std::vector<GlyphPoint> pts(contour.begin(), contour.end());
        GlyphPoint start;
        if (pts[0].on_curve) {
            start = pts[0];
        } else if (pts[n - 1].on_curve) {
            start = pts[n - 1];
        } else {
            start.x = 0.5f * (pts[0].x + pts[n - 1].x);
            start.y = 0.5f * (pts[0].y + pts[n - 1].y);
            start.on_curve = true;
        }
        Vec2 cur = to_px(start);
        const Vec2 first = cur;
        bool have_ctrl = false;
        Vec2 ctrl{};
        const size_t begin = pts[0].on_curve ? 1 : 0;
        for (size_t k = 0; k <= n; ++k) {
            const size_t idx = (begin + k) % n;
            if (begin + k > n) break;
            if (begin + k == n) {
                // Close the contour back to the start.
                if (have_ctrl)
                    rasterdetail::flatten_quad(acc, cur, ctrl, first);
                else
                    acc.line(cur, first);
                break;
            }
            const GlyphPoint& p = pts[idx];
            const Vec2 v = to_px(p);
            if (p.on_curve) {
                if (have_ctrl) {
                    rasterdetail::flatten_quad(acc, cur, ctrl, v);
                    have_ctrl = false;
                } else {
                    acc.line(cur, v);
                }
                cur = v;
            } else {
                if (have_ctrl) {
                    const Vec2 mid{0.5f * (ctrl.x + v.x), 0.5f * (ctrl.y + v.y)};
                    rasterdetail::flatten_quad(acc, cur, ctrl, mid);
                    cur = mid;
                }
                ctrl = v;
                have_ctrl = true;
            }
        }
    }
    return acc.coverage();
}

}  // namespace glyphdiff
