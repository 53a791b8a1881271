#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bdcd/mask.hpp"

namespace bdcd {

/// Interleaved 8-bit image, c channels (RGB order for c == 3).
struct ImageU8 {
    long h = 0, w = 0, c = 3;
    std::vector<uint8_t> v;

    ImageU8() = default;
    ImageU8(long h_, long w_, long c_ = 3)
        : h(h_), w(w_), c(c_), v(static_cast<size_t>(h_) * w_ * c_, 0) {}

    uint8_t& at(long y, long x, long ch) { return v[(y * w + x) * c + ch]; }
    uint8_t at(long y, long x, long ch) const { return v[(y * w + x) * c + ch]; }
    bool operator==(const ImageU8&) const = default;
};

ImageU8 read_image(const std::string& path);        // RGB or grayscale PNG
void write_image(const std::string& path, const ImageU8& img);
void write_mask_png(const std::string& path, const Mask& m);
Mask read_mask_png(const std::string& path);        // single-channel labels

ImageU8 resize_bilinear(const ImageU8& img, long oh, long ow);
Mask resize_nearest(const Mask& m, long oh, long ow);

}  // namespace bdcd
