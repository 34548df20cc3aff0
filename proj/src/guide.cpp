// SPDX-License-Identifier: Apache-2.0
#include "corrguide/guide.hpp"

#include <cmath>
#include <string>

#include "corrguide/tape.hpp"
#include "corrguide/toydiff.hpp"

namespace corrguide::guide {

AttentionMask build_attention_mask(const CorrespondenceField& field, const GuidanceConfig& cfg,
                                   const GridShape& shape) {
  cfg.validate();
  if (field.shape != shape) throw ArgumentError("build_attention_mask: shape mismatch");
  AttentionMask mask = AttentionMask::zero(shape);
  for (int idx = 0; idx < shape.half_tokens(); ++idx) {
    const TokenCoord own = unflatten_half(idx, shape);
    const int row = flatten(own, Half::Target, shape);
    switch (field.status[idx]) {
      case CorrStatus::Inlier: {
        for (int ki = 0; ki < shape.h; ++ki)
          for (int kj = 0; kj < shape.w; ++kj)
            mask.values(row, flatten(TokenCoord{ki, kj}, Half::Reference, shape)) = kNegInf;
        for (const TokenCoord& nb : neighborhood(field.target[idx], cfg.win_a, shape))
          mask.values(row, flatten(nb, Half::Reference, shape)) = cfg.str_a;
        break;
      }
      case CorrStatus::Outlier: {
        for (const TokenCoord& nb : neighborhood(field.target[idx], cfg.win_a, shape))
          mask.values(row, flatten(nb, Half::Reference, shape)) = kNegInf;
        break;
      }
      case CorrStatus::Unmatched:
        break;
    }
  }
  return mask;
}

AttentionMask downsample_mask(const AttentionMask& mask, int scale) {
  if (scale == 1) return mask;
  const GridShape& fine = mask.shape;
  if (scale < 1 || fine.h % scale != 0 || fine.w % scale != 0 || fine.h / scale < 2 ||
      fine.w / scale < 2)
    throw ArgumentError("downsample_mask: scale must divide the grid with at least 2x2 left");
  const GridShape coarse(fine.h / scale, fine.w / scale);
  AttentionMask out = AttentionMask::zero(coarse);
  const int fine_cols = fine.stitched_cols();
  const int coarse_cols = coarse.stitched_cols();
  for (int qi = 0; qi < coarse.h; ++qi)
    for (int qj = 0; qj < coarse_cols; ++qj)
      for (int ki = 0; ki < coarse.h; ++ki)
        for (int kj = 0; kj < coarse_cols; ++kj) {
          bool any_boost = false;
          bool all_suppressed = true;
          double boost = 0.0;
          for (int a = 0; a < scale; ++a)
            for (int b = 0; b < scale; ++b)
              for (int c = 0; c < scale; ++c)
                for (int e = 0; e < scale; ++e) {
                  const double v = mask.values((qi * scale + a) * fine_cols + qj * scale + b,
                                               (ki * scale + c) * fine_cols + kj * scale + e);
                  if (v > 0.0) {
                    any_boost = true;
                    boost = v;
                  }
                  if (v != kNegInf) all_suppressed = false;
                }
          // Conservative: a coarse entry is suppressed only when every fine
          // entry under it is, so coarse masking never blocks a fine match.
          double value = 0.0;
          if (any_boost)
            value = boost;
          else if (all_suppressed)
            value = kNegInf;
          out.values(qi * coarse_cols + qj, ki * coarse_cols + kj) = value;
        }
  return out;
}

AttentionMask restrict_mask_rows(const AttentionMask& mask, const Vector& damage) {
  if (damage.size() != mask.shape.stitched_tokens())
    throw ArgumentError("restrict_mask_rows: damage vector size mismatch");
  AttentionMask out = mask;
  for (int row = 0; row < mask.shape.stitched_tokens(); ++row)
    if (damage[row] == 0.0) out.values.row(row).setZero();
  return out;
}

AttentionMap apply_mask(const AttentionMap& logits, const AttentionMask* mask, double d_a) {
  if (!(d_a > 0.0)) throw ArgumentError("apply_mask: d_a must be > 0");
  if (mask != nullptr && (mask->values.rows() != logits.scores.rows() ||
                          mask->values.cols() != logits.scores.cols()))
    throw ArgumentError("apply_mask: mask shape mismatch");
  const double scale = 1.0 / std::sqrt(d_a);
  AttentionMap out;
  out.query_grid = logits.query_grid;
  out.key_grid = logits.key_grid;
  out.kind = AttentionMap::Kind::PostSoftmax;
  Matrix scaled = mask != nullptr ? ((logits.scores + mask->values) * scale).eval()
                                  : (logits.scores * scale).eval();
  out.scores.resize(scaled.rows(), scaled.cols());
  for (Eigen::Index r = 0; r < scaled.rows(); ++r) {
    const double m = scaled.row(r).maxCoeff();
    Eigen::RowVectorXd e = (scaled.row(r).array() - m).exp();
    out.scores.row(r) = e / e.sum();
  }
  return out;
}

Matrix one_hot_target(const CorrespondenceField& field) {
  const int n = field.shape.half_tokens();
  Matrix out = Matrix::Zero(n, n);
  for (int row = 0; row < n; ++row)
    if (field.status[row] == CorrStatus::Inlier)
      out(row, flatten_half(field.target[row], field.shape)) = 1.0;
  return out;
}

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

constexpr double kStandardizeEps = 1e-8;

struct LossSpec {
  Matrix onehot;
  std::vector<char> active;
  double pos_weight = 1.0;
  double denom = 1.0;
  int inliers = 0;
};

LossSpec make_loss_spec(const CorrespondenceField& field) {
  LossSpec spec;
  const int n = field.shape.half_tokens();
  spec.onehot = one_hot_target(field);
  spec.active.assign(n, 0);
  for (int row = 0; row < n; ++row)
    if (field.status[row] == CorrStatus::Inlier) {
      spec.active[row] = 1;
      ++spec.inliers;
    }
  spec.pos_weight = static_cast<double>(n - 1);
  // Per-entry mean within a row, summed over rows: the loss (and so the
  // guidance strength) grows with the number of constrained tokens.
  spec.denom = static_cast<double>(n);
  return spec;
}

Matrix standardize_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  const auto n = static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    Eigen::RowVectorXd centered = x.row(r).array() - mu;
    const double sd = std::sqrt(centered.squaredNorm() / n);
    out.row(r) = centered / (sd + kStandardizeEps);
  }
  return out;
}

}  // namespace

double objective_S(const AttentionMap& tar2ref, const CorrespondenceField& field) {
  const int n = field.shape.half_tokens();
  if (tar2ref.scores.rows() != n || tar2ref.scores.cols() != n)
    throw ArgumentError("objective_S: map does not match the field's half grid");
  const LossSpec spec = make_loss_spec(field);
  if (spec.inliers == 0) return 0.0;
  const Matrix u = standardize_rows(tar2ref.scores);
  double loss = 0.0;
  for (int r = 0; r < n; ++r) {
    if (!spec.active[r]) continue;
    for (int c = 0; c < n; ++c) {
      const double e = spec.onehot(r, c);
      loss += spec.pos_weight * e * softplus(-u(r, c)) + (1.0 - e) * softplus(u(r, c));
    }
  }
  return loss / spec.denom;
}

namespace {

struct LayerGraph {
  Tape::NodeId loss;
  Tape::NodeId tar2ref;
};

// Shared attention-stack construction for one layer, mirroring the plain
// forward path.
LayerGraph build_layer_graph(Tape& tape, Tape::NodeId features,
                             const toydiff::ToyDenoiser& model, int layer_index,
                             const AttentionMask* base_mask, const LossSpec& spec) {
  const GridShape& shape = model.shape;
  const auto& layer = model.layers[static_cast<std::size_t>(layer_index)];
  const GridDims fine = stitched_dims(shape);

  Tape::NodeId fs = features;
  GridDims grid = fine;
  if (layer.scale != 1) {
    fs = tape.block_mean(features, fine, layer.scale);
    grid = GridDims{shape.h / layer.scale, 2 * (shape.w / layer.scale)};
  }
  const Tape::NodeId q = tape.matmul_const(fs, layer.w_query);
  const Tape::NodeId k = tape.matmul_const(fs, layer.w_key);
  const Tape::NodeId logits = tape.matmul_bt(q, k);

  AttentionMask scaled_mask;
  const Matrix* mask_values = nullptr;
  if (base_mask != nullptr) {
    scaled_mask = downsample_mask(*base_mask, layer.scale);
    mask_values = &scaled_mask.values;
  }
  const Tape::NodeId soft =
      tape.row_softmax(tape.add_const_scale(logits, mask_values, 1.0 / std::sqrt(model.d_a)));

  Tape::NodeId base = soft;
  if (layer.scale != 1) base = tape.attention_upsample(soft, grid, grid, fine, fine);

  std::vector<int> rows(static_cast<std::size_t>(shape.half_tokens()));
  std::vector<int> cols(static_cast<std::size_t>(shape.half_tokens()));
  for (int idx = 0; idx < shape.half_tokens(); ++idx) {
    const TokenCoord c = unflatten_half(idx, shape);
    rows[static_cast<std::size_t>(idx)] = flatten(c, Half::Target, shape);
    cols[static_cast<std::size_t>(idx)] = flatten(c, Half::Reference, shape);
  }
  const Tape::NodeId t2r = tape.submatrix(base, std::move(rows), std::move(cols));
  const Tape::NodeId u = tape.row_standardize(t2r, kStandardizeEps);
  const Tape::NodeId loss = tape.weighted_bce(u, spec.onehot, spec.active, spec.pos_weight,
                                              spec.denom);
  return LayerGraph{loss, t2r};
}

Matrix masked_image_features(const LatentTensor& z) {
  Matrix img = z.image();
  for (int row = 0; row < z.shape().stitched_tokens(); ++row)
    if (z.damage()[row] == 1.0) img.row(row).setZero();
  return img;
}

}  // namespace

LatentGradient grad_latent(const toydiff::ToyDenoiser& model, const LatentTensor& z, int t,
                           const CorrespondenceField& field, const AttentionMask* mask,
                           bool accumulate_per_layer) {
  if (model.shape != z.shape()) throw ArgumentError("grad_latent: model/latent shape mismatch");
  if (field.shape != z.shape()) throw ArgumentError("grad_latent: field shape mismatch");
  const LossSpec spec = make_loss_spec(field);
  const Matrix img = masked_image_features(z);

  LatentGradient result;
  result.noise_grad = Matrix::Zero(z.noise().rows(), z.noise().cols());
  const auto layer_count = static_cast<int>(model.layers.size());
  result.report.per_layer_loss.assign(static_cast<std::size_t>(layer_count), 0.0);

  if (accumulate_per_layer) {
    for (int l = 0; l < layer_count; ++l) {
      Tape tape;
      const Tape::NodeId noise = tape.input(z.noise());
      const Tape::NodeId features = tape.hcat(tape.constant(img), noise);
      const LayerGraph graph = build_layer_graph(tape, features, model, l, mask, spec);
      const Matrix g_features = tape.gradient(graph.loss, noise);
      if (!g_features.allFinite())
        throw NumericError("grad_latent: non-finite gradient in layer " + std::to_string(l) +
                           " at step t=" + std::to_string(t));
      result.noise_grad += g_features;
      result.report.per_layer_loss[static_cast<std::size_t>(l)] = tape.value(graph.loss)(0, 0);
    }
  } else {
    Tape tape;
    const Tape::NodeId noise = tape.input(z.noise());
    const Tape::NodeId features = tape.hcat(tape.constant(img), noise);
    std::vector<Tape::NodeId> losses;
    losses.reserve(static_cast<std::size_t>(layer_count));
    for (int l = 0; l < layer_count; ++l) {
      const LayerGraph graph = build_layer_graph(tape, features, model, l, mask, spec);
      losses.push_back(graph.loss);
      result.report.per_layer_loss[static_cast<std::size_t>(l)] = tape.value(graph.loss)(0, 0);
    }
    const Tape::NodeId total = tape.add_scalars(losses);
    result.noise_grad = tape.gradient(total, noise);
    if (!result.noise_grad.allFinite())
      throw NumericError("grad_latent: non-finite gradient at step t=" + std::to_string(t));
  }

  for (const double l : result.report.per_layer_loss) result.report.total_loss += l;
  result.report.grad_norm = result.noise_grad.norm();
  return result;
}

double objective_total(const toydiff::ToyDenoiser& model, const LatentTensor& z, int /*t*/,
                       const CorrespondenceField& field, const AttentionMask* mask) {
  const toydiff::AttentionForward fw = toydiff::attention_forward(model, z, mask);
  double total = 0.0;
  for (const AttentionMap& m : fw.layer_tar2ref) total += objective_S(m, field);
  return total;
}

Matrix finite_difference_gradient(const toydiff::ToyDenoiser& model, const LatentTensor& z, int t,
                                  const CorrespondenceField& field, const AttentionMask* mask,
                                  double step) {
  Matrix grad(z.noise().rows(), z.noise().cols());
  for (Eigen::Index r = 0; r < grad.rows(); ++r) {
    for (Eigen::Index c = 0; c < grad.cols(); ++c) {
      Matrix plus = z.noise();
      Matrix minus = z.noise();
      plus(r, c) += step;
      minus(r, c) -= step;
      const double f_plus = objective_total(model, z.with_noise(plus), t, field, mask);
      const double f_minus = objective_total(model, z.with_noise(minus), t, field, mask);
      grad(r, c) = (f_plus - f_minus) / (2.0 * step);
    }
  }
  return grad;
}

double gradient_max_rel_error(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ArgumentError("gradient_max_rel_error: shape mismatch");
  const double scale = std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), 1e-12});
  const double floor = 0.01 * scale;
  double worst = 0.0;
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      const double denom = std::max({std::abs(a(r, c)), std::abs(b(r, c)), floor});
      worst = std::max(worst, std::abs(a(r, c) - b(r, c)) / denom);
    }
  return worst;
}

LatentTensor optimize_latent(const LatentTensor& z, const Matrix& grad,
                             const GuidanceConfig& cfg) {
  if (grad.rows() != z.noise().rows() || grad.cols() != z.noise().cols())
    throw ArgumentError("optimize_latent: gradient shape mismatch");
  if (cfg.str_o == 0.0) return z;
  return z.with_noise(z.noise() - cfg.str_o * grad);
}

}  // namespace corrguide::guide
