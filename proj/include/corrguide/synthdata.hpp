// SPDX-License-Identifier: Apache-2.0
//
// Synthetic reference/target scene pairs with exact ground-truth
// correspondence, inpainting-mask generation, stitched embedding, and scene
// file I/O.
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "corrguide/types.hpp"

namespace corrguide::synth {

struct SceneParams {
  GridShape shape{8, 8};
  int d = 4;

  enum class Warp { Shift, Affine } warp = Warp::Shift;
  int shift_i = 0;
  int shift_j = 0;
  // Affine extras: quarter-turn count and horizontal flip applied before the
  // shift. Quarter turns require a square half grid.
  int rot_quarter = 0;
  bool flip_h = false;

  // Value-noise texture: lattice spacing in tokens and the white component
  // amplitude mixed on top.
  double texture_corr_len = 2.0;
  double texture_fine_amp = 0.35;
};

struct MaskParams {
  double ratio_lo = 0.10;
  double ratio_hi = 0.40;
  int min_strokes = 1;
  int max_strokes = 4;
  double min_overlap_coverage = 0.80;
  int max_attempts = 32;
};

struct ScenePair {
  GridShape shape{8, 8};
  int d = 4;
  std::uint64_t seed = 0;
  Matrix reference;          // half_tokens x d
  Matrix target;             // half_tokens x d
  std::vector<int> gt_flat;  // half-grid flat index of the matching reference token; -1 = none
  Vector overlap;            // half_tokens, 0/1
  Vector inpaint;            // half_tokens, 0/1
  double value_min = 0.0;    // recorded extrema over both latents, for metric rescaling
  double value_max = 1.0;
  SceneParams params;

  std::optional<TokenCoord> gt_at(TokenCoord c) const {
    const int g = gt_flat[flatten_half(c, shape)];
    if (g < 0) return std::nullopt;
    return unflatten_half(g, shape);
  }
};

// Deterministic scene from (seed, params): seeded value-noise reference, an
// integer-warped target whose overlap region copies reference values bitwise,
// plus an inpainting mask drawn with `mask`.
ScenePair generate_scene(std::uint64_t seed, const SceneParams& params,
                         const MaskParams& mask = MaskParams{});

// One random rectangle unioned with width-1 random-walk strokes, resampled
// until the masked-token ratio lies in [lo, hi] and at least
// `min_overlap_coverage` of masked tokens sit inside the overlap region.
Vector generate_mask(std::uint64_t seed, const ScenePair& scene, const MaskParams& params);

// Scene with a replaced inpainting mask.
ScenePair with_mask(ScenePair scene, Vector inpaint);

// Reference left, target right; target conditioning zeroed under the mask;
// noise channels drawn from a seeded standard normal.
LatentTensor embed_stitched(const ScenePair& scene);

// Exact correspondence field: Inlier at gt on overlap tokens, Unmatched
// elsewhere, unit consensus.
CorrespondenceField ground_truth_field(const ScenePair& scene);

// Compact binary scene format plus a JSON metadata sidecar next to it.
void save_scene(const ScenePair& scene, const std::string& path);
ScenePair load_scene(const std::string& path);

}  // namespace corrguide::synth
