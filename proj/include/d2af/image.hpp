#pragma once

// Interleaved multi-channel rasters plus the crop / background-blur variants
// fed to the image-text scorer.

#include "d2af/core.hpp"
#include "d2af/random.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace d2af {

template <typename T>
struct Image {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<T> data; // row-major, interleaved

    Image() = default;
    Image(int w, int h, int c, T fill = T{})
        : width(w), height(h), channels(c), data(std::size_t(w) * h * c, fill) {
        if (w <= 0 || h <= 0 || c <= 0) throw InvalidInput("image dimensions must be positive");
    }

    [[nodiscard]] T& at(int x, int y, int c) { return data[(std::size_t(y) * width + x) * channels + c]; }
    [[nodiscard]] const T& at(int x, int y, int c) const {
        return data[(std::size_t(y) * width + x) * channels + c];
    }

    [[nodiscard]] bool empty() const { return data.empty(); }

    template <typename U>
    [[nodiscard]] Image<U> cast() const {
        Image<U> out;
        out.width = width;
        out.height = height;
        out.channels = channels;
        out.data.assign(data.begin(), data.end());
        return out;
    }

    friend bool operator==(const Image&, const Image&) = default;
};

using Raster = Image<std::uint8_t>;
using ImageF = Image<double>;

/// Rounds and saturates to 8 bit.
inline Raster quantize(const ImageF& img) {
    Raster out;
    out.width = img.width;
    out.height = img.height;
    out.channels = img.channels;
    out.data.resize(img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i)
        out.data[i] = static_cast<std::uint8_t>(std::clamp(std::lround(img.data[i]), 0L, 255L));
    return out;
}

template <typename T>
std::uint64_t hash_image(const Image<T>& img) {
    Fnv1a h;
    h.u64(std::uint64_t(img.width)).u64(std::uint64_t(img.height)).u64(std::uint64_t(img.channels));
    if constexpr (sizeof(T) == 1) {
        h.bytes(img.data.data(), img.data.size());
    } else {
        for (const T& v : img.data) h.f64(double(v));
    }
    return h.value();
}

/// Integer pixel rectangle [x0,x1) x [y0,y1).
struct PixelRect {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    [[nodiscard]] int width() const { return x1 - x0; }
    [[nodiscard]] int height() const { return y1 - y0; }
    [[nodiscard]] bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

/// Rounds box edges to the nearest pixel boundary, clipped to the image.
inline PixelRect round_box(const BoundingBox& b, int width, int height) {
    auto r = [](double v, int hi) { return std::clamp(int(std::lround(v)), 0, hi); };
    return {r(b.x_min, width), r(b.y_min, height), r(b.x_max, width), r(b.y_max, height)};
}

enum class VariantKind { crop, background_blur };

inline std::string_view to_string(VariantKind k) {
    return k == VariantKind::crop ? "crop" : "background_blur";
}

struct ImageVariant {
    VariantKind kind = VariantKind::crop;
    ImageF payload;
    BoundingBox source_box;
};

/// Pixel-exact sub-image at the integer-rounded box.
template <typename T>
Image<T> crop(const Image<T>& img, const BoundingBox& box) {
    require_valid(box);
    if (box.x_min < 0 || box.y_min < 0 || box.x_max > img.width || box.y_max > img.height)
        throw InvalidInput("crop box " + to_string(box) + " exceeds image bounds");
    const PixelRect r = round_box(box, img.width, img.height);
    if (r.width() < 1 || r.height() < 1)
        throw InvalidInput("crop box " + to_string(box) + " rounds to less than one pixel");
    Image<T> out(r.width(), r.height(), img.channels);
    for (int y = 0; y < r.height(); ++y)
        for (int x = 0; x < r.width(); ++x)
            for (int c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(r.x0 + x, r.y0 + y, c);
    return out;
}

template <typename T>
ImageVariant make_crop(const Image<T>& img, const BoundingBox& box) {
    return {VariantKind::crop, crop(img, box).template cast<double>(), box};
}

// ---------------------------------------------------------------------------
// Gaussian blur: sampled kernel truncated at ceil(3 sigma), symmetric
// (half-sample) reflection at the borders, separable passes.

/// Normalized weights for offsets -r..r, r = ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidInput("blur sigma must be positive");
    const int radius = int(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-double(i) * i / (2.0 * sigma * sigma));
        sum += k[i + radius];
    }
    for (double& w : k) w /= sum;
    return k;
}

/// Maps any integer index into [0, n) by mirroring about the pixel edges:
/// -1 -> 0, -2 -> 1, n -> n-1.
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

template <typename T>
ImageF gaussian_blur(const Image<T>& img, double sigma) {
    const std::vector<double> k = gaussian_kernel(sigma);
    const int r = int(k.size() / 2);
    const int w = img.width, h = img.height, ch = img.channels;

    ImageF tmp(w, h, ch);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i) acc += k[i + r] * double(img.at(reflect_index(x + i, w), y, c));
                tmp.at(x, y, c) = acc;
            }

    ImageF out(w, h, ch);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp.at(x, reflect_index(y + i, h), c);
                out.at(x, y, c) = acc;
            }
    return out;
}

/// Copies the source pixels inside the rounded box over an already blurred
/// canvas. Lets callers blur an image once and composite per box.
template <typename T>
ImageVariant composite_background_blur(const Image<T>& src, const ImageF& blurred, const BoundingBox& box) {
    require_valid(box);
    if (src.width != blurred.width || src.height != blurred.height || src.channels != blurred.channels)
        throw InvalidInput("blurred canvas does not match source dimensions");
    if (box.x_min < 0 || box.y_min < 0 || box.x_max > src.width || box.y_max > src.height)
        throw InvalidInput("blur box " + to_string(box) + " exceeds image bounds");
    ImageVariant v{VariantKind::background_blur, blurred, box};
    const PixelRect r = round_box(box, src.width, src.height);
    for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x)
            for (int c = 0; c < src.channels; ++c) v.payload.at(x, y, c) = double(src.at(x, y, c));
    return v;
}

template <typename T>
ImageVariant make_background_blur(const Image<T>& img, const BoundingBox& box, double sigma) {
    return composite_background_blur(img, gaussian_blur(img, sigma), box);
}

} // namespace d2af
