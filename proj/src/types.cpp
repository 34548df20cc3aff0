// SPDX-License-Identifier: Apache-2.0
#include "corrguide/types.hpp"

#include <cmath>

namespace corrguide {

void AttentionMap::validate() const {
  if (scores.rows() != query_grid.tokens() || scores.cols() != key_grid.tokens())
    throw ArgumentError("AttentionMap: score matrix does not match grid metadata");
  if (kind == Kind::PostSoftmax) {
    if (scores.minCoeff() < 0.0)
      throw ArgumentError("AttentionMap: negative entry in post-softmax map");
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
      if (std::abs(scores.row(r).sum() - 1.0) > 1e-6)
        throw ArgumentError("AttentionMap: post-softmax row does not sum to 1");
    }
  }
  if (kind == Kind::Scores && scores.minCoeff() < 0.0)
    throw ArgumentError("AttentionMap: negative entry in score map");
}

MatchingMap MatchingMap::zero(const GridShape& shape) {
  MatchingMap m;
  m.shape = shape;
  m.values = Matrix::Zero(shape.half_tokens(), shape.half_tokens());
  return m;
}

CorrespondenceField CorrespondenceField::empty(const GridShape& shape) {
  CorrespondenceField f;
  f.shape = shape;
  const int n = shape.half_tokens();
  f.status.assign(n, CorrStatus::Unmatched);
  f.target.assign(n, TokenCoord{0, 0});
  f.consensus = Vector::Zero(n);
  f.displacement = Matrix::Zero(n, 2);
  return f;
}

AttentionMask AttentionMask::zero(const GridShape& shape) {
  AttentionMask m;
  m.shape = shape;
  m.values = Matrix::Zero(shape.stitched_tokens(), shape.stitched_tokens());
  return m;
}

LatentTensor::LatentTensor(GridShape shape, Matrix image, Matrix noise, Vector damage)
    : shape_(shape), image_(std::move(image)), noise_(std::move(noise)), damage_(std::move(damage)) {
  const int n = shape_.stitched_tokens();
  if (image_.rows() != n || noise_.rows() != n || damage_.size() != n)
    throw ArgumentError("LatentTensor: row counts must equal the stitched token count");
  if (image_.cols() != noise_.cols() || image_.cols() < 1)
    throw ArgumentError("LatentTensor: image and noise must share a positive channel count");
  for (int idx = 0; idx < n; ++idx) {
    const double m = damage_[idx];
    if (m != 0.0 && m != 1.0) throw ArgumentError("LatentTensor: damage mask must be binary");
    if (m == 1.0 && unflatten(idx, shape_).second == Half::Reference)
      throw ArgumentError("LatentTensor: damage mask must be zero on the reference half");
    if (m == 1.0) image_.row(idx).setZero();
  }
}

LatentTensor LatentTensor::with_noise(Matrix noise) const {
  return LatentTensor(shape_, image_, std::move(noise), damage_);
}

void GuidanceConfig::validate() const {
  if (steps_total < 2) throw ArgumentError("GuidanceConfig: steps_total must be >= 2");
  if (step_a < 0 || step_a > steps_total)
    throw ArgumentError("GuidanceConfig: step_a must be in [0, steps_total]");
  if (step_o < 0 || step_o > steps_total)
    throw ArgumentError("GuidanceConfig: step_o must be in [0, steps_total]");
  if (win_a < 0 || win_s < 0) throw ArgumentError("GuidanceConfig: window radii must be >= 0");
  if (!(str_a > 0.0)) throw ArgumentError("GuidanceConfig: str_a must be > 0");
  if (str_o < 0.0) throw ArgumentError("GuidanceConfig: str_o must be >= 0");
  if (outlier_threshold < 1) throw ArgumentError("GuidanceConfig: outlier_threshold must be >= 1");
}

}  // namespace corrguide
