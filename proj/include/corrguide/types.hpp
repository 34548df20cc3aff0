// SPDX-License-Identifier: Apache-2.0
//
// Core value types shared by all pipeline stages. All of these are plain
// values: construct, validate, pass around; operations return new instances
// instead of mutating.
#pragma once

#include <cstdint>
#include <vector>

#include "corrguide/grid.hpp"

namespace corrguide {

// Extent of a token grid a score matrix is indexed by; may describe a full
// stitched grid, one half, or a coarsened version of either.
struct GridDims {
  int rows = 0;
  int cols = 0;
  int tokens() const { return rows * cols; }
  bool operator==(const GridDims&) const = default;
};

inline GridDims stitched_dims(const GridShape& s) { return GridDims{s.h, 2 * s.w}; }
inline GridDims half_dims(const GridShape& s) { return GridDims{s.h, s.w}; }

// Dense query x key score matrix with spatial grid metadata.
//   Logits      — raw affinities, any sign
//   PostSoftmax — each row is a probability distribution
//   Scores      — nonnegative, rows need not sum to one (sums, submatrices)
struct AttentionMap {
  enum class Kind { Logits, PostSoftmax, Scores };

  GridDims query_grid;
  GridDims key_grid;
  Kind kind = Kind::PostSoftmax;
  Matrix scores;

  // Throws ArgumentError on shape mismatch or, for PostSoftmax maps, rows
  // that are not probability distributions (1e-6 row-sum tolerance).
  void validate() const;
};

// Accumulated target-to-reference consensus. Row = target token (half-grid
// row-major), column = reference token.
struct MatchingMap {
  GridShape shape;
  Matrix values;

  static MatchingMap zero(const GridShape& shape);
};

enum class CorrStatus : std::uint8_t { Inlier, Outlier, Unmatched };

// Per-target-token correspondence estimate. `target` holds the matched
// reference coordinate for Inlier entries and the recorded (filtered-out)
// coordinate for Outlier entries; it is meaningless for Unmatched entries.
// `displacement` rows are (di, dj) = target - own coordinate, maintained for
// Inlier entries only.
struct CorrespondenceField {
  GridShape shape;
  std::vector<CorrStatus> status;
  std::vector<TokenCoord> target;
  Vector consensus;
  Matrix displacement;  // half_tokens x 2

  static CorrespondenceField empty(const GridShape& shape);

  CorrStatus status_at(TokenCoord c) const { return status[flatten_half(c, shape)]; }
  TokenCoord target_at(TokenCoord c) const { return target[flatten_half(c, shape)]; }
};

// Additive logit mask over the full stitched grid. Values are restricted to
// { boost value, kNegInf, 0 }.
struct AttentionMask {
  GridShape shape;
  Matrix values;  // stitched_tokens x stitched_tokens

  static AttentionMask zero(const GridShape& shape);
};

// Stitched inpainting state: frozen conditioning channels, evolving noise
// channels, and the binary damage mask. Rows are stitched-grid tokens.
class LatentTensor {
 public:
  // `damage` must be 0/1, zero everywhere on the reference half. Conditioning
  // rows under damage are zeroed on construction.
  LatentTensor(GridShape shape, Matrix image, Matrix noise, Vector damage);

  const GridShape& shape() const { return shape_; }
  int d() const { return static_cast<int>(image_.cols()); }
  int channels() const { return 2 * d() + 1; }
  const Matrix& image() const { return image_; }
  const Matrix& noise() const { return noise_; }
  const Vector& damage() const { return damage_; }

  // Same conditioning and mask, new noise channels.
  LatentTensor with_noise(Matrix noise) const;

 private:
  GridShape shape_;
  Matrix image_;
  Matrix noise_;
  Vector damage_;
};

// Guidance strengths and window radii for one run.
struct GuidanceConfig {
  int steps_total = 50;      // denoising steps T
  int step_a = 50;           // steps guided by attention masking
  int step_o = 30;           // steps guided by latent optimization
  int win_a = 1;             // mask neighborhood radius
  int win_s = 2;             // smoothing neighborhood radius
  double str_a = 1.0;        // mask boost value v
  double str_o = 0.1;        // latent update step weight
  int outlier_threshold = 4; // dominant-token correspondent count

  void validate() const;
};

}  // namespace corrguide
