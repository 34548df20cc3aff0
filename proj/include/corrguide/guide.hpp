// SPDX-License-Identifier: Apache-2.0
//
// Correspondence-driven guidance: additive attention masks, the masked
// softmax, the alignment objective, and its gradient with respect to the
// evolving noise channels.
#pragma once

#include <vector>

#include "corrguide/types.hpp"

namespace corrguide::toydiff {
struct ToyDenoiser;
}

namespace corrguide::guide {

struct ObjectiveReport {
  std::vector<double> per_layer_loss;
  double total_loss = 0.0;
  double grad_norm = 0.0;
};

// Full stitched additive mask from a refined field. Inlier target queries get
// cfg.str_a on the reference window around their match and kNegInf on every
// other reference key; Outlier queries get kNegInf on the window around the
// recorded outlier target; Unmatched target queries and all reference queries
// are zero rows. Target-key columns are always zero.
AttentionMask build_attention_mask(const CorrespondenceField& field, const GuidanceConfig& cfg,
                                   const GridShape& shape);

// Coarse mask for a layer at `scale`: a coarse entry is the boost value if
// any covered fine entry carries it, kNegInf only if every covered fine entry
// is kNegInf, and zero otherwise.
AttentionMask downsample_mask(const AttentionMask& mask, int scale);

// Zero the mask rows of target queries that are not damaged.
AttentionMask restrict_mask_rows(const AttentionMask& mask, const Vector& damage);

// Row softmax of (logits + mask) / sqrt(d_a). A null mask means a zero mask.
AttentionMap apply_mask(const AttentionMap& logits, const AttentionMask* mask, double d_a);

// One-hot rows at the matched reference index for Inlier tokens; zero rows
// for Outlier and Unmatched tokens.
Matrix one_hot_target(const CorrespondenceField& field);

// Weighted binary cross-entropy between sigmoid(row-standardized scores) and
// the one-hot target, averaged over the entries of Inlier rows with the
// positive entry weighted by (#negatives / #positives) per row. Zero when no
// row is an Inlier.
double objective_S(const AttentionMap& tar2ref, const CorrespondenceField& field);

struct LatentGradient {
  Matrix noise_grad;  // stitched_tokens x d
  ObjectiveReport report;
};

// Gradient of the per-layer objective sum with respect to the noise channels,
// computed by reverse-mode differentiation through the attention stack. When
// `accumulate_per_layer` is set, each layer's gradient is computed on its own
// tape and summed, matching the joint result.
LatentGradient grad_latent(const toydiff::ToyDenoiser& model, const LatentTensor& z, int t,
                           const CorrespondenceField& field, const AttentionMask* mask = nullptr,
                           bool accumulate_per_layer = false);

// Same loss evaluated through the plain forward path, for finite-difference
// checks against grad_latent.
double objective_total(const toydiff::ToyDenoiser& model, const LatentTensor& z, int t,
                       const CorrespondenceField& field, const AttentionMask* mask = nullptr);

// Central finite-difference gradient of objective_total over the noise
// channels; the independent oracle for grad_latent.
Matrix finite_difference_gradient(const toydiff::ToyDenoiser& model, const LatentTensor& z, int t,
                                  const CorrespondenceField& field,
                                  const AttentionMask* mask = nullptr, double step = 1e-5);

// Worst per-entry relative disagreement between two gradients. The
// denominator is floored at 1% of the larger gradient's max magnitude:
// entries whose true value is structurally zero (suppressed attention paths)
// sit below finite-difference resolution, so comparing them at full relative
// precision would only measure differencing noise.
double gradient_max_rel_error(const Matrix& a, const Matrix& b);

// noise <- noise - cfg.str_o * grad; conditioning and damage mask untouched.
LatentTensor optimize_latent(const LatentTensor& z, const Matrix& grad, const GuidanceConfig& cfg);

}  // namespace corrguide::guide
