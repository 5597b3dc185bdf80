#pragma once

#include <cstddef>
#include <string>

#include "uplvp/error.hpp"

namespace uplvp {

/// Axis-aligned pixel box; all four bounds are inclusive.
struct BBox {
  std::size_t row_min = 0;
  std::size_t col_min = 0;
  std::size_t row_max = 0;
  std::size_t col_max = 0;

  std::size_t height() const { return row_max - row_min + 1; }
  std::size_t width() const { return col_max - col_min + 1; }
  std::size_t area() const { return height() * width(); }

  bool valid() const { return row_min <= row_max && col_min <= col_max; }
  bool fits(std::size_t h, std::size_t w) const { return valid() && row_max < h && col_max < w; }

  BBox translated(std::size_t dr, std::size_t dc) const {
    return {row_min + dr, col_min + dc, row_max + dr, col_max + dc};
  }

  std::string str() const {
    return "(" + std::to_string(row_min) + "," + std::to_string(col_min) + "," +
           std::to_string(row_max) + "," + std::to_string(col_max) + ")";
  }

  friend bool operator==(const BBox&, const BBox&) = default;
};

inline void require_box_in(const BBox& box, std::size_t h, std::size_t w) {
  if (!box.fits(h, w)) {
    throw BoundsError("box " + box.str() + " outside " + std::to_string(h) + "x" +
                      std::to_string(w) + " image");
  }
}

}  // namespace uplvp
