#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "img2inchi/errors.hpp"
#include "img2inchi/tensor.hpp"

namespace img2inchi {

// 8-bit grayscale raster. 0 = black ink, 255 = white background.
struct Image {
    int w = 0;
    int h = 0;
    std::vector<std::uint8_t> px;

    Image() = default;
    Image(int width, int height, std::uint8_t fill = 255)
        : w(width), h(height), px(static_cast<std::size_t>(width) * height, fill) {}

    std::uint8_t at(int x, int y) const { return px[static_cast<std::size_t>(y) * w + x]; }
    void set(int x, int y, std::uint8_t v) {
        if (x >= 0 && x < w && y >= 0 && y < h) px[static_cast<std::size_t>(y) * w + x] = v;
    }
    bool operator==(const Image& o) const { return w == o.w && h == o.h && px == o.px; }
};

// [H x W x 1] tensor with pixel values scaled to [0, 1].
template <typename F>
Tensor<F> image_to_tensor(const Image& img) {
    Tensor<F> t({img.h, img.w, 1});
    for (std::size_t i = 0; i < img.px.size(); ++i) t.data()[i] = static_cast<F>(img.px[i]) / F(255);
    return t;
}

// ---- PGM (binary P5), the native format ----

inline void write_pgm(const std::string& path, const Image& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write image " + path);
    f << "P5\n" << img.w << " " << img.h << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
    if (!f) throw IoError("write to image " + path + " failed");
}

namespace detail {

inline int pgm_next_int(std::istream& is, const std::string& path) {
    // Skips whitespace and '#' comments between header fields.
    for (;;) {
        const int c = is.peek();
        if (c == '#') {
            std::string skip;
            std::getline(is, skip);
        } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            is.get();
        } else {
            break;
        }
    }
    int v = 0;
    if (!(is >> v)) throw IoError("image " + path + ": malformed PGM header");
    return v;
}

}  // namespace detail

inline Image read_pgm(std::istream& f, const std::string& path) {
    char m0 = 0, m1 = 0;
    f.get(m0);
    f.get(m1);
    if (m0 != 'P' || m1 != '5') throw IoError("image " + path + " is not binary PGM (P5)");
    Image img;
    img.w = detail::pgm_next_int(f, path);
    img.h = detail::pgm_next_int(f, path);
    const int maxval = detail::pgm_next_int(f, path);
    if (img.w <= 0 || img.h <= 0 || maxval <= 0 || maxval > 255)
        throw IoError("image " + path + ": unsupported PGM geometry or depth");
    f.get();  // single whitespace before the raster
    img.px.resize(static_cast<std::size_t>(img.w) * img.h);
    f.read(reinterpret_cast<char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
    if (!f) throw IoError("image " + path + " is truncated");
    return img;
}

// ---- PNG (8-bit; gray, gray+alpha, RGB and RGBA accepted, converted to gray) ----

namespace detail {

inline std::uint32_t read_be32(const unsigned char* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline void push_be32(std::vector<unsigned char>& v, std::uint32_t x) {
    v.push_back(static_cast<unsigned char>(x >> 24));
    v.push_back(static_cast<unsigned char>(x >> 16));
    v.push_back(static_cast<unsigned char>(x >> 8));
    v.push_back(static_cast<unsigned char>(x));
}

inline int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace detail

inline Image read_png(std::istream& f, const std::string& path) {
    static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    unsigned char hdr[8];
    f.read(reinterpret_cast<char*>(hdr), 8);
    if (!f || std::memcmp(hdr, sig, 8) != 0) throw IoError("image " + path + " is not a PNG file");

    int width = 0, height = 0, bit_depth = 0, color_type = 0;
    std::vector<unsigned char> idat;
    for (;;) {
        unsigned char chunk_hdr[8];
        f.read(reinterpret_cast<char*>(chunk_hdr), 8);
        if (!f) throw IoError("image " + path + ": truncated PNG");
        const std::uint32_t len = detail::read_be32(chunk_hdr);
        const std::string type(reinterpret_cast<char*>(chunk_hdr + 4), 4);
        std::vector<unsigned char> payload(len);
        if (len) f.read(reinterpret_cast<char*>(payload.data()), len);
        f.ignore(4);  // CRC; integrity is zlib-checked on the pixel stream
        if (!f) throw IoError("image " + path + ": truncated PNG chunk " + type);
        if (type == "IHDR") {
            if (len != 13) throw IoError("image " + path + ": bad IHDR");
            width = static_cast<int>(detail::read_be32(payload.data()));
            height = static_cast<int>(detail::read_be32(payload.data() + 4));
            bit_depth = payload[8];
            color_type = payload[9];
            if (payload[12] != 0) throw IoError("image " + path + ": interlaced PNG not supported");
            if (bit_depth != 8) throw IoError("image " + path + ": only 8-bit PNG supported");
            if (color_type != 0 && color_type != 2 && color_type != 4 && color_type != 6)
                throw IoError("image " + path + ": unsupported PNG color type " + std::to_string(color_type));
        } else if (type == "IDAT") {
            idat.insert(idat.end(), payload.begin(), payload.end());
        } else if (type == "IEND") {
            break;
        }
    }
    if (width <= 0 || height <= 0 || idat.empty()) throw IoError("image " + path + ": empty PNG");

    const int channels = color_type == 0 ? 1 : color_type == 2 ? 3 : color_type == 4 ? 2 : 4;
    const std::size_t stride = static_cast<std::size_t>(width) * channels;
    std::vector<unsigned char> raw((stride + 1) * static_cast<std::size_t>(height));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw IoError("image " + path + ": PNG pixel stream is corrupt");

    // Undo per-row filters, then collapse to grayscale.
    std::vector<unsigned char> pix(stride * static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y) {
        const unsigned char filter = raw[(stride + 1) * static_cast<std::size_t>(y)];
        const unsigned char* src = raw.data() + (stride + 1) * static_cast<std::size_t>(y) + 1;
        unsigned char* dst = pix.data() + stride * static_cast<std::size_t>(y);
        const unsigned char* up = y > 0 ? pix.data() + stride * static_cast<std::size_t>(y - 1) : nullptr;
        for (std::size_t i = 0; i < stride; ++i) {
            const int a = i >= static_cast<std::size_t>(channels) ? dst[i - channels] : 0;
            const int b = up ? up[i] : 0;
            const int c = (up && i >= static_cast<std::size_t>(channels)) ? up[i - channels] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += detail::paeth(a, b, c); break;
                default: throw IoError("image " + path + ": bad PNG filter " + std::to_string(filter));
            }
            dst[i] = static_cast<unsigned char>(v & 0xFF);
        }
    }
    Image img(width, height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const unsigned char* p = pix.data() + stride * static_cast<std::size_t>(y) +
                                     static_cast<std::size_t>(x) * channels;
            int g;
            if (channels == 1 || channels == 2) g = p[0];
            else g = (299 * p[0] + 587 * p[1] + 114 * p[2] + 500) / 1000;
            img.px[static_cast<std::size_t>(y) * width + x] = static_cast<std::uint8_t>(g);
        }
    return img;
}

inline void write_png(const std::string& path, const Image& img) {
    std::vector<unsigned char> raw;
    raw.reserve((static_cast<std::size_t>(img.w) + 1) * img.h);
    for (int y = 0; y < img.h; ++y) {
        raw.push_back(0);  // filter: none
        raw.insert(raw.end(), img.px.begin() + static_cast<std::size_t>(y) * img.w,
                   img.px.begin() + static_cast<std::size_t>(y + 1) * img.w);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw IoError("PNG compression failed for " + path);
    compressed.resize(bound);

    std::vector<unsigned char> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    auto chunk = [&out](const char* type, const std::vector<unsigned char>& payload) {
        detail::push_be32(out, static_cast<std::uint32_t>(payload.size()));
        const std::size_t start = out.size();
        out.insert(out.end(), type, type + 4);
        out.insert(out.end(), payload.begin(), payload.end());
        const uLong crc = crc32(crc32(0L, Z_NULL, 0), out.data() + start, static_cast<uInt>(out.size() - start));
        detail::push_be32(out, static_cast<std::uint32_t>(crc));
    };
    std::vector<unsigned char> ihdr;
    detail::push_be32(ihdr, static_cast<std::uint32_t>(img.w));
    detail::push_be32(ihdr, static_cast<std::uint32_t>(img.h));
    ihdr.insert(ihdr.end(), {8, 0, 0, 0, 0});  // 8-bit grayscale, no interlace
    chunk("IHDR", ihdr);
    chunk("IDAT", compressed);
    chunk("IEND", {});

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write image " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write to image " + path + " failed");
}

// Reads PGM (P5) or PNG, dispatching on the leading bytes.
inline Image read_image(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read image " + path);
    const int first = f.peek();
    if (first == 'P') return read_pgm(f, path);
    if (first == 0x89) return read_png(f, path);
    throw IoError("image " + path + " is neither PGM (P5) nor PNG");
}

}  // namespace img2inchi
