// SPDX-License-Identifier: Apache-2.0
#include "corrguide/corr.hpp"

#include <algorithm>
#include <cmath>

namespace corrguide::corr {

CorrespondenceField estimate(const MatchingMap& matching) {
  if (matching.values.rows() != matching.shape.half_tokens() ||
      matching.values.cols() != matching.shape.half_tokens())
    throw ArgumentError("estimate: matching map has inconsistent dimensions");
  if (matching.values.minCoeff() < 0.0)
    throw ArgumentError("estimate: matching map entries must be >= 0");

  const GridShape shape = matching.shape;
  CorrespondenceField field = CorrespondenceField::empty(shape);
  for (int row = 0; row < shape.half_tokens(); ++row) {
    int best = -1;
    double best_score = 0.0;
    for (int col = 0; col < shape.half_tokens(); ++col) {
      const double s = matching.values(row, col);
      if (s > best_score) {
        best_score = s;
        best = col;
      }
    }
    if (best < 0) continue;  // all-zero row stays Unmatched
    const TokenCoord own = unflatten_half(row, shape);
    const TokenCoord ref = unflatten_half(best, shape);
    field.status[row] = CorrStatus::Inlier;
    field.target[row] = ref;
    field.consensus[row] = best_score;
    field.displacement(row, 0) = ref.i - own.i;
    field.displacement(row, 1) = ref.j - own.j;
  }
  return field;
}

CorrespondenceField filter_outliers(const CorrespondenceField& field, int threshold) {
  if (threshold < 1) throw ArgumentError("filter_outliers: threshold must be >= 1");
  const GridShape shape = field.shape;
  std::vector<int> correspondents(shape.half_tokens(), 0);
  for (int row = 0; row < shape.half_tokens(); ++row)
    if (field.status[row] == CorrStatus::Inlier)
      ++correspondents[flatten_half(field.target[row], shape)];

  CorrespondenceField out = field;
  for (int row = 0; row < shape.half_tokens(); ++row) {
    if (out.status[row] != CorrStatus::Inlier) continue;
    if (correspondents[flatten_half(out.target[row], shape)] > threshold) {
      out.status[row] = CorrStatus::Outlier;
      out.consensus[row] = 0.0;
      out.displacement.row(row).setZero();
    }
  }
  return out;
}

namespace {

int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

}  // namespace

CorrespondenceField smooth(const CorrespondenceField& field, int win_s) {
  if (win_s < 0) throw ArgumentError("smooth: window radius must be >= 0");
  const GridShape shape = field.shape;
  CorrespondenceField out = field;
  for (int row = 0; row < shape.half_tokens(); ++row) {
    if (field.status[row] == CorrStatus::Outlier) continue;
    const TokenCoord own = unflatten_half(row, shape);

    double weight_sum = 0.0;
    double di_sum = 0.0;
    double dj_sum = 0.0;
    bool uniform = true;
    double first_di = 0.0;
    double first_dj = 0.0;
    bool have_first = false;
    for (const TokenCoord& nb : neighborhood(own, win_s, shape)) {
      const int idx = flatten_half(nb, shape);
      if (field.status[idx] != CorrStatus::Inlier) continue;
      const double w = field.consensus[idx];
      if (w <= 0.0) continue;
      const double di = field.displacement(idx, 0);
      const double dj = field.displacement(idx, 1);
      if (!have_first) {
        first_di = di;
        first_dj = dj;
        have_first = true;
      } else if (di != first_di || dj != first_dj) {
        uniform = false;
      }
      weight_sum += w;
      di_sum += w * di;
      dj_sum += w * dj;
    }

    if (weight_sum <= 0.0) {
      out.status[row] = CorrStatus::Unmatched;
      out.consensus[row] = 0.0;
      out.displacement.row(row).setZero();
      continue;
    }

    // A window whose contributing displacements agree is passed through
    // exactly, keeping smoothing an identity on uniform fields.
    const double avg_di = uniform ? first_di : di_sum / weight_sum;
    const double avg_dj = uniform ? first_dj : dj_sum / weight_sum;
    TokenCoord tgt{round_half_up(own.i + avg_di), round_half_up(own.j + avg_dj)};
    tgt.i = std::clamp(tgt.i, 0, shape.h - 1);
    tgt.j = std::clamp(tgt.j, 0, shape.w - 1);

    out.status[row] = CorrStatus::Inlier;
    out.target[row] = tgt;
    out.displacement(row, 0) = tgt.i - own.i;
    out.displacement(row, 1) = tgt.j - own.j;
  }
  return out;
}

}  // namespace corrguide::corr
