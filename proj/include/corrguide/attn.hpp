// SPDX-License-Identifier: Apache-2.0
//
// Attention-map aggregation: per-layer head averaging, rescaling of coarse
// maps to the base grid, summation across layers, extraction of the
// target-to-reference submatrix, and the timestep-accumulated matching map.
#pragma once

#include <vector>

#include "corrguide/types.hpp"

namespace corrguide::attn {

// One self-attention layer's post-softmax maps. `scale` is the divisor of
// the base grid this layer operates at (1, 2, 4, ...).
struct LayerAttention {
  int layer_id = 0;
  std::vector<AttentionMap> head_maps;
  int scale = 1;
};

// Entrywise mean over heads. Rows remain row-stochastic.
AttentionMap average_heads(const LayerAttention& layer);

// Integer upsampling to a larger grid pair: each source query row is
// replicated across the fine query tokens it covers, and each source key
// score is split uniformly across its fine key block, so per-row mass is
// conserved.
AttentionMap rescale_map(const AttentionMap& map, GridDims target_query, GridDims target_key);

// Entrywise sum of maps at a common grid. Result kind is Scores.
AttentionMap aggregate_layers(const std::vector<AttentionMap>& layers);

// Submatrix with target-half queries and reference-half keys, reindexed to
// half-grid row-major order on both axes.
AttentionMap extract_tar2ref(const AttentionMap& stitched, const GridShape& shape);

// Entrywise accumulation of a nonnegative tar2ref map into the matching map.
MatchingMap accumulate_matching(const MatchingMap& prev, const AttentionMap& tar2ref);

}  // namespace corrguide::attn
