// SPDX-License-Identifier: Apache-2.0
#include "corrguide/attn.hpp"

namespace corrguide::attn {

AttentionMap average_heads(const LayerAttention& layer) {
  if (layer.head_maps.empty()) throw ArgumentError("average_heads: layer has no heads");
  const AttentionMap& first = layer.head_maps.front();
  AttentionMap out;
  out.query_grid = first.query_grid;
  out.key_grid = first.key_grid;
  out.kind = first.kind;
  out.scores = Matrix::Zero(first.scores.rows(), first.scores.cols());
  for (const AttentionMap& head : layer.head_maps) {
    if (head.query_grid != first.query_grid || head.key_grid != first.key_grid)
      throw ArgumentError("average_heads: heads disagree on grid shape");
    out.scores += head.scores;
  }
  out.scores /= static_cast<double>(layer.head_maps.size());
  return out;
}

AttentionMap rescale_map(const AttentionMap& map, GridDims target_query, GridDims target_key) {
  const GridDims sq = map.query_grid;
  const GridDims sk = map.key_grid;
  if (sq.rows <= 0 || sq.cols <= 0 || sk.rows <= 0 || sk.cols <= 0)
    throw ArgumentError("rescale_map: source grids must be non-empty");
  if (target_query.rows % sq.rows != 0 || target_query.cols % sq.cols != 0 ||
      target_key.rows % sk.rows != 0 || target_key.cols % sk.cols != 0)
    throw ArgumentError("rescale_map: target dimensions must be integer multiples of the source");

  const int qr = target_query.rows / sq.rows;
  const int qc = target_query.cols / sq.cols;
  const int kr = target_key.rows / sk.rows;
  const int kc = target_key.cols / sk.cols;
  const double key_split = 1.0 / (static_cast<double>(kr) * static_cast<double>(kc));

  AttentionMap out;
  out.query_grid = target_query;
  out.key_grid = target_key;
  out.kind = map.kind;
  out.scores = Matrix::Zero(target_query.tokens(), target_key.tokens());
  for (int fi = 0; fi < target_query.rows; ++fi) {
    for (int fj = 0; fj < target_query.cols; ++fj) {
      const int src_q = (fi / qr) * sq.cols + (fj / qc);
      const int dst_q = fi * target_query.cols + fj;
      for (int gi = 0; gi < target_key.rows; ++gi) {
        for (int gj = 0; gj < target_key.cols; ++gj) {
          const int src_k = (gi / kr) * sk.cols + (gj / kc);
          const int dst_k = gi * target_key.cols + gj;
          out.scores(dst_q, dst_k) = map.scores(src_q, src_k) * key_split;
        }
      }
    }
  }
  return out;
}

AttentionMap aggregate_layers(const std::vector<AttentionMap>& layers) {
  if (layers.empty()) throw ArgumentError("aggregate_layers: no maps given");
  const AttentionMap& first = layers.front();
  AttentionMap out;
  out.query_grid = first.query_grid;
  out.key_grid = first.key_grid;
  out.kind = AttentionMap::Kind::Scores;
  out.scores = Matrix::Zero(first.scores.rows(), first.scores.cols());
  for (const AttentionMap& m : layers) {
    if (m.query_grid != first.query_grid || m.key_grid != first.key_grid)
      throw ArgumentError("aggregate_layers: maps disagree on grid shape");
    out.scores += m.scores;
  }
  return out;
}

AttentionMap extract_tar2ref(const AttentionMap& stitched, const GridShape& shape) {
  if (stitched.query_grid != stitched_dims(shape) || stitched.key_grid != stitched_dims(shape))
    throw ArgumentError("extract_tar2ref: map is not at the stitched grid of this shape");
  AttentionMap out;
  out.query_grid = half_dims(shape);
  out.key_grid = half_dims(shape);
  out.kind = stitched.kind == AttentionMap::Kind::Logits ? AttentionMap::Kind::Logits
                                                         : AttentionMap::Kind::Scores;
  out.scores = Matrix::Zero(shape.half_tokens(), shape.half_tokens());
  for (int qi = 0; qi < shape.h; ++qi) {
    for (int qj = 0; qj < shape.w; ++qj) {
      const int row = flatten(TokenCoord{qi, qj}, Half::Target, shape);
      const int out_row = qi * shape.w + qj;
      for (int ki = 0; ki < shape.h; ++ki) {
        for (int kj = 0; kj < shape.w; ++kj) {
          const int col = flatten(TokenCoord{ki, kj}, Half::Reference, shape);
          out.scores(out_row, ki * shape.w + kj) = stitched.scores(row, col);
        }
      }
    }
  }
  return out;
}

MatchingMap accumulate_matching(const MatchingMap& prev, const AttentionMap& tar2ref) {
  if (tar2ref.query_grid != half_dims(prev.shape) || tar2ref.key_grid != half_dims(prev.shape))
    throw ArgumentError("accumulate_matching: map grid does not match the matching map shape");
  if (tar2ref.scores.minCoeff() < 0.0)
    throw ArgumentError("accumulate_matching: negative attention entries");
  MatchingMap out;
  out.shape = prev.shape;
  out.values = prev.values + tar2ref.scores;
  return out;
}

}  // namespace corrguide::attn
