// Copyright (c) 2026 The glyphdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "glyphdiff/errors.hpp"

// Self-contained TrueType outline reader: enough of the sfnt format to map
// codepoints (cmap formats 4 and 12) and pull quadratic outlines out of
// glyf, including composite glyphs with offset/scale components. Anything
// outside that envelope fails loudly as a font decode error.

namespace glyphdiff {

inline std::vector<uint32_t> utf8_codepoints(const std::string& s) {
    std::vector<uint32_t> out;
    size_t i = 0;
    while (i < s.size()) {
        const auto b0 = static_cast<unsigned char>(s[i]);
        uint32_t cp = 0;
        size_t len = 0;
        if (b0 < 0x80) {
            cp = b0;
            len = 1;
        } else if ((b0 & 0xE0) == 0xC0) {
            cp = b0 & 0x1F;
            len = 2;
        } else if ((b0 & 0xF0) == 0xE0) {
            cp = b0 & 0x0F;
            len = 3;
        } else if ((b0 & 0xF8) == 0xF0) {
            cp = b0 & 0x07;
            len = 4;
        } else {
            throw DataError("invalid UTF-8 byte in string");
        }
        if (i + len > s.size()) throw DataError("truncated UTF-8 sequence");
        for (size_t k = 1; k < len; ++k) {
            const auto bk = static_cast<unsigned char>(s[i + k]);
            if ((bk & 0xC0) != 0x80) throw DataError("invalid UTF-8 continuation byte");
            cp = (cp << 6) | (bk & 0x3F);
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

inline std::string utf8_encode(uint32_t cp) {
    std::string s;
    if (cp < 0x80) {
        s.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        s.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        s.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        s.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        s.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
    return s;
}

struct GlyphPoint {
    float x = 0;
    float y = 0;
    bool on_curve = true;
};

/// Closed contours in font units, quadratic control points off-curve.
struct GlyphOutline {
    std::vector<std::vector<GlyphPoint>> contours;

    bool empty() const { return contours.empty(); }

    void bounds(float& min_x, float& min_y, float& max_x, float& max_y) const {
        min_x = min_y = 1e30f;
        max_x = max_y = -1e30f;
        for (const auto& c : contours)
            for (const auto& p : c) {
                min_x = std::min(min_x, p.x);
                min_y = std::min(min_y, p.y);
                max_x = std::max(max_x, p.x);
                max_y = std::max(max_y, p.y);
            }
    }
};

class Font {
public:
    static Font load(const std::string& path) {
        std::ifstream in(path, std::ios::binary | std::ios::ate);
        if (!in) throw DataError("cannot open font file: " + path);
        const auto size = static_cast<size_t>(in.tellg());
        Font f;
        f.path_ = path;
        f.data_.resize(size);
        in.seekg(0);
        in.read(reinterpret_cast<char*>(f.data_.data()), static_cast<std::streamsize>(size));
        if (!in) throw DataError("cannot read font file: " + path);
        f.parse();
        return f;
    }

    const std::string& path() const { return path_; }
    int units_per_em() const { return units_per_em_; }
    int num_glyphs() const { return num_glyphs_; }

    bool has_glyph(uint32_t codepoint) const { return cmap_.count(codepoint) != 0; }

    /// Outline in font units; empty contours for blank glyphs (space).
    GlyphOutline glyph_outline(uint32_t codepoint) const {
        auto it = cmap_.find(codepoint);
        if (it == cmap_.end())
            throw DataError(path_ + ": no glyph for U+" + hex(codepoint));
        GlyphOutline out;
        append_glyph(it->second, 1.f, 0.f, 0.f, 1.f, 0.f, 0.f, 0, out);
        return out;
    }

private:
    static std::string hex(uint32_t v) {
        static const char* d = "0123456789ABCDEF";
        std::string s;
        for (int shift = 28; shift >= 0; shift -= 4) {
            const auto nib = (v >> shift) & 0xF;
            if (!s.empty() || nib || shift == 0) s.push_back(d[nib]);
        }
        return s;
    }

    uint8_t u8(size_t off) const {
        if (off >= data_.size()) throw DataError(path_ + ": font decode failure (truncated)");
        return data_[off];
    }
    uint16_t u16(size_t off) const { return static_cast<uint16_t>((u8(off) << 8) | u8(off + 1)); }
    uint32_t u32(size_t off) const {
        return (static_cast<uint32_t>(u16(off)) << 16) | u16(off + 2);
    }
    int16_t i16(size_t off) const { return static_cast<int16_t>(u16(off)); }
    float f2dot14(size_t off) const { return static_cast<float>(i16(off)) / 16384.0f; }

    void parse() {
        const uint32_t version = u32(0);
        if (version != 0x00010000 && version != 0x74727565)  // 1.0 or 'true'
            throw DataError(path_ + ": not a TrueType outline font");
        const uint16_t num_tables = u16(4);
        size_t head = 0, maxp = 0, cmap = 0, loca = 0, glyf = 0;
        for (uint16_t i = 0; i < num_tables; ++i) {
            const size_t rec = 12 + 16 * static_cast<size_t>(i);
            const uint32_t tag = u32(rec);
            const uint32_t off = u32(rec + 8);
            switch (tag) {
                case 0x68656164: head = off; break;  // head
                case 0x6d617870: maxp = off; break;  // maxp
                case 0x636d6170: cmap = off; break;  // cmap
                case 0x6c6f6361: loca = off; break;  // loca
                case 0x676c7966: glyf = off; break;  // glyf
                default: break;
            }
        }
        if (!head || !maxp || !cmap || !loca || !glyf)
            throw DataError(path_ + ": missing required font tables");
        units_per_em_ = u16(head + 18);
        long_loca_ = i16(head + 50) != 0;
        num_glyphs_ = u16(maxp + 4);
        loca_off_ = loca;
        glyf_off_ = glyf;
        parse_cmap(cmap);
    }

    void parse_cmap(size_t cmap) {
        const uint16_t n = u16(cmap + 2);
        size_t best = 0;
        int best_score = -1;
        for (uint16_t i = 0; i < n; ++i) {
            const size_t rec = cmap + 4 + 8 * static_cast<size_t>(i);
            const uint16_t platform = u16(rec);
            const uint16_t encoding = u16(rec + 2);
            const size_t sub = cmap + u32(rec + 4);
            const uint16_t format = u16(sub);
            int score = -1;
            if (platform == 3 && encoding == 10 && format == 12) score = 4;
            else if (platform == 3 && encoding == 1 && format == 4) score = 3;
            else if (platform == 0 && format == 12) score = 2;
            else if (platform == 0 && format == 4) score = 1;
            if (score > best_score) {
                best_score = score;
                best = sub;
            }
        }
        if (best_score < 0) throw DataError(path_ + ": no usable cmap subtable");
        const uint16_t format = u16(best);
        if (format == 4)
            parse_cmap4(best);
        else
            parse_cmap12(best);
        if (cmap_.empty()) throw DataError(path_ + ": empty character map");
    }

    void parse_cmap4(size_t sub) {
        const uint16_t seg_x2 = u16(sub + 6);
        const uint16_t segs = seg_x2 / 2;
        const size_t end_base = sub + 14;
        const size_t start_base = end_base + seg_x2 + 2;
        const size_t delta_base = start_base + seg_x2;
        const size_t range_base = delta_base + seg_x2;
        for (uint16_t s = 0; s < segs; ++s) {
            const uint16_t end = u16(end_base + 2 * static_cast<size_t>(s));
            const uint16_t start = u16(start_base + 2 * static_cast<size_t>(s));
            const int16_t delta = i16(delta_base + 2 * static_cast<size_t>(s));
            const uint16_t range_off = u16(range_base + 2 * static_cast<size_t>(s));
            if (start == 0xFFFF) continue;
            for (uint32_t cp = start; cp <= end; ++cp) {
                uint16_t gid;
                if (range_off == 0) {
                    gid = static_cast<uint16_t>(cp + delta);
                } else {
                    const size_t addr = range_base + 2 * static_cast<size_t>(s) + range_off +
                                        2 * (cp - start);
                    gid = u16(addr);
                    if (gid != 0) gid = static_cast<uint16_t>(gid + delta);
                }
                if (gid != 0) cmap_[cp] = gid;
            }
        }
    }

    void parse_cmap12(size_t sub) {
        const uint32_t groups = u32(sub + 12);
        size_t inserted = 0;
        for (uint32_t g = 0; g < groups; ++g) {
            const size_t rec = sub + 16 + 12 * static_cast<size_t>(g);
            const uint32_t start = u32(rec);
            const uint32_t end = u32(rec + 4);
            const uint32_t gid0 = u32(rec + 8);
            for (uint32_t cp = start; cp <= end; ++cp) {
                cmap_[cp] = static_cast<uint16_t>(gid0 + (cp - start));
                if (++inserted > 400000) throw DataError(path_ + ": character map too large");
                if (cp == 0xFFFFFFFF) break;
            }
        }
    }

    std::pair<size_t, size_t> glyph_range(uint16_t gid) const {
        if (gid >= num_glyphs_) throw DataError(path_ + ": glyph id out of range");
        size_t a, b;
        if (long_loca_) {
            a = u32(loca_off_ + 4 * static_cast<size_t>(gid));
            b = u32(loca_off_ + 4 * static_cast<size_t>(gid) + 4);
        } else {
            a = 2 * static_cast<size_t>(u16(loca_off_ + 2 * static_cast<size_t>(gid)));
            b = 2 * static_cast<size_t>(u16(loca_off_ + 2 * static_cast<size_t>(gid) + 2));
        }
        return {glyf_off_ + a, glyf_off_ + b};
    }

    /// Appends gid's contours to `out` under the affine map
    /// (x,y) -> (a*x + c*y + dx, b*x + d*y + dy).
    void append_glyph(uint16_t gid, float a, float b, float c, float d, float dx, float dy, int depth,
                      GlyphOutline& out) const {
        if (depth > 8) throw DataError(path_ + ": composite glyph nesting too deep");
        const auto [begin, end] = glyph_range(gid);
        if (begin == end) return;  // blank glyph
        const int16_t n_contours = i16(begin);
        if (n_contours >= 0)
            append_simple(begin, n_contours, a, b, c, d, dx, dy, out);
        else
            append_composite(begin, a, b, c, d, dx, dy, depth, out);
    }

    void append_simple(size_t off, int16_t n_contours, float a, float b, float c, float d, float dx,
                       float dy, GlyphOutline& out) const {
        size_t p = off + 10;
        std::vector<uint16_t> end_pts(static_cast<size_t>(n_contours));
        for (int16_t i = 0; i < n_contours; ++i) {
            end_pts[static_cast<size_t>(i)] = u16(p);
            p += 2;
        }
        const size_t n_pts = n_contours == 0 ? 0 : static_cast<size_t>(end_pts.back()) + 1;
        const uint16_t instr_len = u16(p);
        p += 2 + instr_len;

        std::vector<uint8_t> flags;
        flags.reserve(n_pts);
        while (flags.size() < n_pts) {
            const uint8_t f = u8(p++);
            flags.push_back(f);
            if (f & 0x08) {  // repeat
                const uint8_t reps = u8(p++);
                for (uint8_t r = 0; r < reps && flags.size() < n_pts; ++r) flags.push_back(f);
            }
        }
        std::vector<int> xs(n_pts), ys(n_pts);
        int v = 0;
        for (size_t i = 0; i < n_pts; ++i) {
            const uint8_t f = flags[i];
            if (f & 0x02) {
                const uint8_t delta = u8(p++);
                v += (f & 0x10) ? delta : -delta;
            } else if (!(f & 0x10)) {
                v += i16(p);
                p += 2;
            }
            xs[i] = v;
        }
        v = 0;
        for (size_t i = 0; i < n_pts; ++i) {
            const uint8_t f = flags[i];
            if (f & 0x04) {
                const uint8_t delta = u8(p++);
                v += (f & 0x20) ? delta : -delta;
            } else if (!(f & 0x20)) {
                v += i16(p);
                p += 2;
            }
            ys[i] = v;
        }

        size_t start = 0;
        for (int16_t ci = 0; ci < n_contours; ++ci) {
            const size_t stop = end_pts[static_cast<size_t>(ci)];
            std::vector<GlyphPoint> contour;
            for (size_t i = start; i <= stop && i < n_pts; ++i) {
                const float fx = static_cast<float>(xs[i]);
                const float fy = static_cast<float>(ys[i]);
                GlyphPoint gp;
                gp.x = a * fx + c * fy + dx;
                gp.y = b * fx + d * fy + dy;
                gp.on_curve = (flags[i] & 0x01) != 0;
                contour.push_back(gp);
            }
            if (contour.size() >= 2) out.contours.push_back(std::move(contour));
            start = stop + 1;
        }
    }

    void append_composite(size_t off, float a, float b, float c, float d, float dx, float dy, int depth,
                          GlyphOutline& out) const {
        size_t p = off + 10;
        while (true) {
            const uint16_t flags = u16(p);
            const uint16_t sub_gid = u16(p + 2);
            p += 4;
            float arg1, arg2;
            if (flags & 0x0001) {  // words
                arg1 = static_cast<float>(i16(p));
                arg2 = static_cast<float>(i16(p + 2));
                p += 4;
            } else {
                arg1 = static_cast<float>(static_cast<int8_t>(u8(p)));
                arg2 = static_cast<float>(static_cast<int8_t>(u8(p + 1)));
                p += 2;
            }
            if (!(flags & 0x0002)) throw DataError(path_ + ": point-matching composite glyphs unsupported");
            float sa = 1.f, sb = 0.f, sc = 0.f, sd = 1.f;
            if (flags & 0x0008) {  // single scale
                sa = sd = f2dot14(p);
                p += 2;
            } else if (flags & 0x0040) {  // x & y scale
                sa = f2dot14(p);
                sd = f2dot14(p + 2);
                p += 4;
            } else if (flags & 0x0080) {  // 2x2
                sa = f2dot14(p);
                sb = f2dot14(p + 2);
                sc = f2dot14(p + 4);
                sd = f2dot14(p + 6);
                p += 8;
            }
            // Compose child transform (sa..sd, arg1/arg2 offset) with ours.
            const float na = a * sa + c * sb;
            const float nb = b * sa + d * sb;
            const float nc = a * sc + c * sd;
            const float nd = b * sc + d * sd;
            const float ndx = a * arg1 + c * arg2 + dx;
            const float ndy = b * arg1 + d * arg2 + dy;
            append_glyph(sub_gid, na, nb, nc, nd, ndx, ndy, depth + 1, out);
            if (!(flags & 0x0020)) break;  // no more components
        }
    }

    std::string path_;
    std::vector<uint8_t> data_;
    std::unordered_map<uint32_t, uint16_t> cmap_;
    size_t loca_off_ = 0, glyf_off_ = 0;
    int units_per_em_ = 1000;
    uint16_t num_glyphs_ = 0;
    bool long_loca_ = false;
};

}  // namespace glyphdiff
