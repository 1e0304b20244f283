#pragma once

#include <cstdint>
#include <vector>

namespace rccm {

// Binary segmentation mask, row-major, 1 = plaque.
struct Mask {
  int64_t h = 0, w = 0;
  std::vector<uint8_t> v;

  Mask() = default;
  Mask(int64_t height, int64_t width) : h(height), w(width), v(static_cast<size_t>(height * width), 0) {}

  uint8_t at(int64_t y, int64_t x) const { return v[static_cast<size_t>(y * w + x)]; }
  void set(int64_t y, int64_t x, uint8_t val) { v[static_cast<size_t>(y * w + x)] = val; }

  int64_t area_px() const {
    int64_t n = 0;
    for (uint8_t b : v) n += b ? 1 : 0;
    return n;
  }

  bool empty_mask() const { return area_px() == 0; }
  bool operator==(const Mask& o) const { return h == o.h && w == o.w && v == o.v; }
};

}  // namespace rccm
