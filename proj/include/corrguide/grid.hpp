// SPDX-License-Identifier: Apache-2.0
//
// Token-grid geometry for the stitched reference|target layout. One image
// half is h x w tokens; the stitched grid is h x 2w with the reference on
// the left (columns [0, w)) and the target on the right (columns [w, 2w)).
#pragma once

#include <cstdlib>
#include <utility>
#include <vector>

#include "corrguide/common.hpp"

namespace corrguide {

struct TokenCoord {
  int i = 0;
  int j = 0;
  bool operator==(const TokenCoord&) const = default;
};

enum class Half { Reference, Target };

struct GridShape {
  int h = 2;
  int w = 2;

  GridShape() = default;
  GridShape(int h_, int w_) : h(h_), w(w_) {
    if (h < 2 || w < 2) throw ArgumentError("GridShape: h and w must both be >= 2");
  }

  int half_tokens() const { return h * w; }
  int stitched_tokens() const { return 2 * h * w; }
  int stitched_cols() const { return 2 * w; }
  bool contains(TokenCoord c) const { return c.i >= 0 && c.i < h && c.j >= 0 && c.j < w; }
  bool operator==(const GridShape&) const = default;
};

// Row-major index into the stitched grid.
inline int flatten(TokenCoord c, Half half, const GridShape& shape) {
  if (!shape.contains(c)) throw ArgumentError("flatten: coordinate out of bounds");
  return c.i * shape.stitched_cols() + (half == Half::Target ? shape.w : 0) + c.j;
}

inline std::pair<TokenCoord, Half> unflatten(int flat, const GridShape& shape) {
  if (flat < 0 || flat >= shape.stitched_tokens())
    throw ArgumentError("unflatten: index out of bounds");
  const int cols = shape.stitched_cols();
  const int i = flat / cols;
  const int col = flat % cols;
  if (col < shape.w) return {TokenCoord{i, col}, Half::Reference};
  return {TokenCoord{i, col - shape.w}, Half::Target};
}

// Row-major index within one image half.
inline int flatten_half(TokenCoord c, const GridShape& shape) {
  if (!shape.contains(c)) throw ArgumentError("flatten_half: coordinate out of bounds");
  return c.i * shape.w + c.j;
}

inline TokenCoord unflatten_half(int flat, const GridShape& shape) {
  if (flat < 0 || flat >= shape.half_tokens())
    throw ArgumentError("unflatten_half: index out of bounds");
  return TokenCoord{flat / shape.w, flat % shape.w};
}

inline int chebyshev(TokenCoord a, TokenCoord b) {
  return std::max(std::abs(a.i - b.i), std::abs(a.j - b.j));
}

// Chebyshev ball of the given radius, clipped to the half grid. Includes the
// center token. Row-major order.
inline std::vector<TokenCoord> neighborhood(TokenCoord c, int radius, const GridShape& shape) {
  if (!shape.contains(c)) throw ArgumentError("neighborhood: coordinate out of bounds");
  if (radius < 0) throw ArgumentError("neighborhood: radius must be >= 0");
  std::vector<TokenCoord> out;
  const int i0 = std::max(0, c.i - radius);
  const int i1 = std::min(shape.h - 1, c.i + radius);
  const int j0 = std::max(0, c.j - radius);
  const int j1 = std::min(shape.w - 1, c.j + radius);
  out.reserve(static_cast<std::size_t>(i1 - i0 + 1) * static_cast<std::size_t>(j1 - j0 + 1));
  for (int i = i0; i <= i1; ++i)
    for (int j = j0; j <= j1; ++j) out.push_back(TokenCoord{i, j});
  return out;
}

}  // namespace corrguide
