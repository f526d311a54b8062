#pragma once

// Binary masks and their run-length text form: row-major, alternating run
// lengths starting with background, space-separated decimals.

#include "d2af/core.hpp"
#include "d2af/image.hpp"

#include <charconv>
#include <cstdint>
#include <string>
#include <vector>

namespace d2af {

struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits; // 0/1, row-major

    BinaryMask() = default;
    BinaryMask(int w, int h) : width(w), height(h), bits(std::size_t(w) * h, 0) {
        if (w <= 0 || h <= 0) throw InvalidInput("mask dimensions must be positive");
    }

    [[nodiscard]] std::uint8_t at(int x, int y) const { return bits[std::size_t(y) * width + x]; }
    void set(int x, int y, bool v = true) { bits[std::size_t(y) * width + x] = v ? 1 : 0; }

    [[nodiscard]] std::int64_t area() const {
        std::int64_t n = 0;
        for (auto b : bits) n += b;
        return n;
    }

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

struct RleMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint32_t> runs;

    [[nodiscard]] std::int64_t area() const {
        std::int64_t n = 0;
        for (std::size_t i = 1; i < runs.size(); i += 2) n += runs[i];
        return n;
    }

    friend bool operator==(const RleMask&, const RleMask&) = default;
};

inline RleMask rle_encode(const BinaryMask& m) {
    RleMask r{m.width, m.height, {}};
    std::uint8_t current = 0;
    std::uint32_t run = 0;
    for (auto b : m.bits) {
        const std::uint8_t v = b ? 1 : 0;
        if (v != current) {
            r.runs.push_back(run);
            run = 0;
            current = v;
        }
        ++run;
    }
    r.runs.push_back(run);
    return r;
}

inline BinaryMask rle_decode(const RleMask& r) {
    BinaryMask m(r.width, r.height);
    std::size_t pos = 0;
    std::uint8_t v = 0;
    for (auto run : r.runs) {
        if (pos + run > m.bits.size()) throw InvalidInput("RLE runs exceed mask size");
        std::fill_n(m.bits.begin() + std::ptrdiff_t(pos), run, v);
        pos += run;
        v ^= 1;
    }
    if (pos != m.bits.size()) throw InvalidInput("RLE runs do not cover the mask");
    return m;
}

inline std::string rle_to_text(const RleMask& r) {
    std::string out;
    for (std::size_t i = 0; i < r.runs.size(); ++i) {
        if (i) out.push_back(' ');
        out += std::to_string(r.runs[i]);
    }
    return out;
}

inline RleMask rle_from_text(std::string_view text, int width, int height) {
    RleMask r{width, height, {}};
    std::uint64_t total = 0;
    for (const auto& tok : split_words(text)) {
        std::uint32_t v = 0;
        auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc{} || p != tok.data() + tok.size()) throw InvalidInput("bad RLE token '" + tok + "'");
        r.runs.push_back(v);
        total += v;
    }
    if (total != std::uint64_t(width) * std::uint64_t(height))
        throw InvalidInput("RLE runs do not sum to width*height");
    return r;
}

/// Filled integer-rounded rectangle.
inline BinaryMask box_mask(const BoundingBox& box, int width, int height) {
    BinaryMask m(width, height);
    const PixelRect r = round_box(box, width, height);
    for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x) m.set(x, y);
    return m;
}

/// True if every foreground pixel lies within the box grown by `dilation`.
inline bool support_within(const BinaryMask& m, const BoundingBox& box, int dilation) {
    const PixelRect r = round_box(box, m.width, m.height);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            if (m.at(x, y) && (x < r.x0 - dilation || x >= r.x1 + dilation || y < r.y0 - dilation ||
                               y >= r.y1 + dilation))
                return false;
    return true;
}

} // namespace d2af
