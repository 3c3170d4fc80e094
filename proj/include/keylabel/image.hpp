#pragma once

#include <cstdint>
#include <vector>

namespace kpl {

/// Row-major interleaved image.
template <typename T>
struct Image {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<T> pixels;

    Image() = default;
    Image(int w, int h, int c = 1, T fill = T{})
        : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill)
    {
    }

    bool empty() const { return pixels.empty(); }
    bool inBounds(int u, int v) const { return u >= 0 && v >= 0 && u < width && v < height; }

    T& at(int u, int v, int c = 0) { return pixels[(static_cast<std::size_t>(v) * width + u) * channels + c]; }
    const T& at(int u, int v, int c = 0) const
    {
        return pixels[(static_cast<std::size_t>(v) * width + u) * channels + c];
    }

    bool operator==(const Image&) const = default;
};

/// 16-bit depth, units of 1/depth_scale meters, 0 = invalid.
using DepthImage = Image<std::uint16_t>;
/// 8-bit RGB.
using ColorImage = Image<std::uint8_t>;
/// Binary mask, one byte per pixel holding 0 or 1.
using Mask = Image<std::uint8_t>;

inline std::size_t count_set(const Mask& mask)
{
    std::size_t n = 0;
    for (auto p : mask.pixels)
        n += p != 0;
    return n;
}

}  // namespace kpl
