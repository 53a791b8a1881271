#pragma once

#include <cstdint>
#include <vector>

namespace bdcd {

/// Per-pixel integer label map.
struct Mask {
    long h = 0, w = 0;
    std::vector<uint8_t> v;

    Mask() = default;
    Mask(long h_, long w_) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, 0) {}

    uint8_t& at(long y, long x) { return v[y * w + x]; }
    uint8_t at(long y, long x) const { return v[y * w + x]; }
    long numel() const { return h * w; }
    bool operator==(const Mask&) const = default;
};

}  // namespace bdcd
