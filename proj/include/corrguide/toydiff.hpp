// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale stitched-image inpainting simulator: a deterministic DDIM
// schedule, a small multi-scale self-attention denoiser whose clean-sample
// prediction blends reference content through attention, and the per-step
// guidance loop tying correspondence estimation to denoising.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "corrguide/guide.hpp"
#include "corrguide/synthdata.hpp"
#include "corrguide/types.hpp"

namespace corrguide::toydiff {

// Deterministic (eta = 0) sampling schedule. alpha_bar[t] runs from 1.0 at
// the clean end t=0 down to kNoisyAlphaBar at t=steps, strictly decreasing.
struct Schedule {
  int steps = 0;
  Vector alpha_bar;  // size steps + 1

  double ab(int t) const;
  double sqrt_ab(int t) const;
  double sqrt_one_minus_ab(int t) const;
};

inline constexpr double kNoisyAlphaBar = 0.999;

Schedule build_schedule(int steps);

// Two-projection self-attention denoiser. Each layer operates on the base
// grid divided by `scale` (features mean-pooled per block); logits are QK^T
// with the sqrt(d_a) scaling applied together with the mask. The key
// projection is seeded equal to the query projection so token affinity
// tracks content similarity. The clean-sample prediction for damaged tokens
// blends reference-half conditioning rows through the scale-1 layer's
// attention.
// Per-entry scale of the seeded projections; with orthonormal rows the
// attention logit of a matched clean token pair is kProjectionScale^2 * 2d.
inline constexpr double kProjectionScale = 1.5;

struct ToyDenoiser {
  struct Layer {
    int scale = 1;
    Matrix w_query;  // 2d x d_a
    Matrix w_key;    // 2d x d_a
  };

  GridShape shape{8, 8};
  int d = 4;
  int d_a = 16;
  std::vector<Layer> layers;

  static ToyDenoiser seeded(const GridShape& shape, int d, int d_a,
                            const std::vector<int>& scales, std::uint64_t seed);

  // Index of the first scale-1 layer (guaranteed to exist).
  int base_layer() const;
};

// Token features: [conditioning * (1 - damage) | noise], one row per
// stitched token.
Matrix denoiser_features(const LatentTensor& z);

// Block-mean pooling of per-token features to a coarser stitched grid.
Matrix pool_features(const Matrix& features, const GridShape& shape, int scale);

// Attention stack only: masked per-layer softmax maps, each rescaled to the
// base grid and reduced to its target-to-reference submatrix, plus the
// scale-1 layer's stitched map used for content blending.
struct AttentionForward {
  std::vector<AttentionMap> layer_tar2ref;  // base half grid, one per layer
  AttentionMap base_stitched;               // scale-1 layer, post-softmax
};

AttentionForward attention_forward(const ToyDenoiser& model, const LatentTensor& z,
                                   const AttentionMask* mask);

struct ForwardResult {
  Matrix x0;   // clean-sample prediction, stitched_tokens x d
  Matrix eps;  // noise estimate consistent with the schedule at step t
  std::vector<AttentionMap> layer_tar2ref;
  int blend_fallbacks = 0;  // damaged rows that fell back to uniform reference attention
};

ForwardResult denoiser_forward(const ToyDenoiser& model, const Schedule& schedule,
                               const LatentTensor& z, int t, const AttentionMask* mask);

struct StepTiming {
  double mask_ms = 0.0;
  double opt_ms = 0.0;
  double denoise_ms = 0.0;
  double corr_ms = 0.0;
  double total_ms() const { return mask_ms + opt_ms + denoise_ms + corr_ms; }
};

struct StepTrace {
  int t = 0;
  int k = 0;  // executed-step index, 0 at t = T
  bool mask_applied = false;
  bool optimized = false;
  int blend_fallbacks = 0;
  std::vector<AttentionMap> layer_tar2ref;
  CorrespondenceField field;  // guidance correspondence after this step
  std::optional<guide::ObjectiveReport> objective;
  StepTiming timing;
  int correct = 0;
  int correct_total = 0;
};

enum class RunMode { Full, NoAcc, NoCyc, MaskOnly, NoGuide, NoSmooth, NoFilter };

RunMode parse_run_mode(const std::string& name);
std::string run_mode_name(RunMode mode);

// Correspondence update policy across steps.
enum class CorrPolicy { Accumulate, Replace, Freeze };

struct RunOptions {
  bool attention_mask = true;
  bool filter = true;
  bool smooth = true;
  bool optimize = true;
  CorrPolicy policy = CorrPolicy::Accumulate;

  static RunOptions for_mode(RunMode mode);
};

struct PipelineConfig {
  GuidanceConfig guidance;
  int d_a = 16;
  std::vector<int> layer_scales{1, 2};
  std::uint64_t model_seed = 1234;
  // When set, mask rows of undamaged target queries are zeroed so guidance
  // only touches the damaged region.
  bool restrict_to_masked = false;

  void validate(const GridShape& shape) const;
};

struct RunResult {
  Matrix restored_target;  // half_tokens x d clean-sample estimate
  std::vector<StepTrace> traces;
  LatentTensor final_latent;
  MatchingMap final_matching;
  CorrespondenceField final_field;
};

RunResult run_inpaint(const synth::ScenePair& scene, const PipelineConfig& cfg, RunMode mode);
RunResult run_inpaint(const synth::ScenePair& scene, const PipelineConfig& cfg,
                      const RunOptions& options);

}  // namespace corrguide::toydiff
