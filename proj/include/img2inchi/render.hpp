#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "img2inchi/image.hpp"
#include "img2inchi/molecule.hpp"
#include "img2inchi/rng.hpp"

namespace img2inchi {

namespace detail {

// 5x7 bitmap font for the element glyphs (bit 4 = leftmost column).
inline const std::array<std::uint8_t, 7>& glyph_rows(char c) {
    static const std::array<std::uint8_t, 7> glyph_C = {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E};
    static const std::array<std::uint8_t, 7> glyph_N = {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11};
    static const std::array<std::uint8_t, 7> glyph_O = {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E};
    static const std::array<std::uint8_t, 7> glyph_S = {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E};
    static const std::array<std::uint8_t, 7> glyph_H = {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11};
    static const std::array<std::uint8_t, 7> glyph_l = {0x04, 0x04, 0x04, 0x04, 0x04, 0x04, 0x06};
    static const std::array<std::uint8_t, 7> glyph_blank = {0, 0, 0, 0, 0, 0, 0};
    switch (c) {
        case 'C': return glyph_C;
        case 'N': return glyph_N;
        case 'O': return glyph_O;
        case 'S': return glyph_S;
        case 'H': return glyph_H;
        case 'l': return glyph_l;
        default: return glyph_blank;
    }
}

inline void draw_line(Image& img, int x0, int y0, int x1, int y1, std::uint8_t color) {
    // Bresenham.
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
        img.set(x0, y0, color);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

inline void draw_glyph(Image& img, int left, int top, char c) {
    const auto& rows = glyph_rows(c);
    for (int r = 0; r < 7; ++r)
        for (int col = 0; col < 5; ++col)
            if (rows[static_cast<std::size_t>(r)] & (1 << (4 - col))) img.set(left + col, top + r, 0);
}

}  // namespace detail

struct PixelRect {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive
};

struct PixelSegment {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

// Geometry captured while rendering, consumed by the corruption pass: where
// each atom's mark is, and the individual lines of each double bond.
struct RenderMeta {
    std::vector<PixelRect> atom_boxes;
    std::vector<std::array<PixelSegment, 2>> double_bond_lines;
};

struct Rendered {
    Image image;
    RenderMeta meta;
};

// Deterministic rasterization: white background, 1-px black bond lines
// (double bonds as two parallel lines), 5x7 element labels on every
// non-carbon atom. Same molecule and size, same bytes.
inline Rendered render(const MoleculeGraph& mol, int size) {
    if (size < 32) throw ContractError("render: image size must be >= 32");
    Rendered out;
    out.image = Image(size, size, 255);
    const int margin = std::max(6, size / 16);
    auto px = [&](double v) { return margin + static_cast<int>(std::lround(v * (size - 1 - 2 * margin))); };

    std::vector<std::pair<int, int>> at(mol.atoms.size());
    for (std::size_t i = 0; i < mol.atoms.size(); ++i)
        at[i] = {px(mol.coords[i].first), px(mol.coords[i].second)};

    for (const Bond& b : mol.bonds) {
        const auto [x0, y0] = at[static_cast<std::size_t>(b.a)];
        const auto [x1, y1] = at[static_cast<std::size_t>(b.b)];
        if (b.order == 1) {
            detail::draw_line(out.image, x0, y0, x1, y1, 0);
        } else {
            // Parallel pair offset perpendicular to the dominant direction.
            const int ox = std::abs(x1 - x0) >= std::abs(y1 - y0) ? 0 : 1;
            const int oy = 1 - ox;
            detail::draw_line(out.image, x0 - ox, y0 - oy, x1 - ox, y1 - oy, 0);
            detail::draw_line(out.image, x0 + ox, y0 + oy, x1 + ox, y1 + oy, 0);
            out.meta.double_bond_lines.push_back(
                {PixelSegment{x0 - ox, y0 - oy, x1 - ox, y1 - oy}, PixelSegment{x0 + ox, y0 + oy, x1 + ox, y1 + oy}});
        }
    }
    for (std::size_t i = 0; i < mol.atoms.size(); ++i) {
        const std::string& sym = mol.atoms[i];
        const auto [cx, cy] = at[i];
        if (sym == "C") {
            out.meta.atom_boxes.push_back({cx - 2, cy - 2, cx + 2, cy + 2});
            continue;
        }
        const int glyphs = static_cast<int>(sym.size());
        const int width = glyphs * 5 + (glyphs - 1);
        const int left = cx - width / 2;
        const int top = cy - 3;
        PixelRect box{left - 1, top - 1, left + width, top + 7};
        for (int y = box.y0; y <= box.y1; ++y)
            for (int x = box.x0; x <= box.x1; ++x) out.image.set(x, y, 255);
        for (int g = 0; g < glyphs; ++g) detail::draw_glyph(out.image, left + g * 6, top, sym[static_cast<std::size_t>(g)]);
        out.meta.atom_boxes.push_back(box);
    }
    return out;
}

// Corruption parameters; every probability defaults to off so the default
// augment call is the identity.
struct AugmentParams {
    double sp_density = 0.0;       // per-pixel inversion probability
    double atom_drop_p = 0.0;      // probability of erasing one atom mark
    double dbl_to_single_p = 0.0;  // probability of removing one line of a double bond
    int artifact_strokes = 0;      // max count of random short line artifacts

    bool is_identity() const {
        return sp_density <= 0.0 && atom_drop_p <= 0.0 && dbl_to_single_p <= 0.0 && artifact_strokes <= 0;
    }
};

// Applies the corruptions independently under the rng; the label of the
// underlying molecule is unchanged by construction. Salt-and-pepper runs
// last and flips each selected pixel to the opposite extreme, so the count
// of changed pixels is Binomial(w*h, sp_density).
inline Image augment(const Image& img, const RenderMeta& meta, Rng& rng, const AugmentParams& params) {
    Image out = img;
    if (params.atom_drop_p > 0.0 && !meta.atom_boxes.empty() && rng.uniform() < params.atom_drop_p) {
        const auto& box = meta.atom_boxes[rng.below(meta.atom_boxes.size())];
        for (int y = box.y0; y <= box.y1; ++y)
            for (int x = box.x0; x <= box.x1; ++x) out.set(x, y, 255);
    }
    if (params.dbl_to_single_p > 0.0 && !meta.double_bond_lines.empty() &&
        rng.uniform() < params.dbl_to_single_p) {
        const auto& pair = meta.double_bond_lines[rng.below(meta.double_bond_lines.size())];
        const auto& line = pair[rng.below(2)];
        detail::draw_line(out, line.x0, line.y0, line.x1, line.y1, 255);
    }
    if (params.artifact_strokes > 0) {
        const int count = static_cast<int>(rng.below(static_cast<std::uint64_t>(params.artifact_strokes) + 1));
        for (int k = 0; k < count; ++k) {
            const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(out.w)));
            const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(out.h)));
            const int len = 4 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(4, out.w / 8))));
            const double angle = rng.uniform() * 6.283185307179586;
            const int x1 = x0 + static_cast<int>(std::lround(std::cos(angle) * len));
            const int y1 = y0 + static_cast<int>(std::lround(std::sin(angle) * len));
            detail::draw_line(out, x0, y0, x1, y1, 0);
        }
    }
    if (params.sp_density > 0.0) {
        for (std::size_t i = 0; i < out.px.size(); ++i)
            if (rng.uniform() < params.sp_density) out.px[i] = out.px[i] >= 128 ? 0 : 255;
    }
    return out;
}

}  // namespace img2inchi
