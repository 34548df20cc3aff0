// SPDX-License-Identifier: Apache-2.0
#include "corrguide/toydiff.hpp"

#include <algorithm>
#include <cmath>

#include "corrguide/attn.hpp"
#include "corrguide/corr.hpp"
#include "corrguide/eval.hpp"

namespace corrguide::toydiff {

double Schedule::ab(int t) const {
  if (t < 0 || t > steps) throw ArgumentError("Schedule: step index out of range");
  return alpha_bar[t];
}

double Schedule::sqrt_ab(int t) const { return std::sqrt(ab(t)); }

double Schedule::sqrt_one_minus_ab(int t) const { return std::sqrt(1.0 - ab(t)); }

Schedule build_schedule(int steps) {
  if (steps < 2) throw ArgumentError("build_schedule: steps must be >= 2");
  Schedule s;
  s.steps = steps;
  s.alpha_bar.resize(steps + 1);
  for (int t = 0; t <= steps; ++t)
    s.alpha_bar[t] = 1.0 - (1.0 - kNoisyAlphaBar) * (static_cast<double>(t) / steps);
  return s;
}

ToyDenoiser ToyDenoiser::seeded(const GridShape& shape, int d, int d_a,
                                const std::vector<int>& scales, std::uint64_t seed) {
  if (d < 1) throw ArgumentError("ToyDenoiser: d must be >= 1");
  if (d_a < 1) throw ArgumentError("ToyDenoiser: d_a must be >= 1");
  if (scales.empty()) throw ArgumentError("ToyDenoiser: at least one layer required");
  if (std::find(scales.begin(), scales.end(), 1) == scales.end())
    throw ArgumentError("ToyDenoiser: a scale-1 layer is required for content blending");

  ToyDenoiser model;
  model.shape = shape;
  model.d = d;
  model.d_a = d_a;
  const int c_in = 2 * d;
  if (d_a < c_in) throw ArgumentError("ToyDenoiser: d_a must be >= 2*d");
  SplitMix64 root(seed);
  for (std::size_t l = 0; l < scales.size(); ++l) {
    const int s = scales[l];
    if (s < 1 || shape.h % s != 0 || shape.w % s != 0 ||
        (s > 1 && (shape.h / s < 2 || shape.w / s < 2)))
      throw ArgumentError("ToyDenoiser: layer scale must divide the grid with at least 2x2 left");
    Layer layer;
    layer.scale = s;
    SplitMix64 rng = root.fork(l);
    // Seeded random projection with orthonormal rows, so QK^T is an exact
    // scaled content similarity: a plain Gaussian projection distorts token
    // norms by ~sqrt(2/d_a) and that bias drowns the matching signal.
    Matrix gaussian(d_a, c_in);
    for (int r = 0; r < d_a; ++r)
      for (int c = 0; c < c_in; ++c) gaussian(r, c) = rng.next_normal();
    const Matrix q = Eigen::HouseholderQR<Matrix>(gaussian).householderQ() *
                     Matrix::Identity(d_a, c_in);
    layer.w_query = kProjectionScale * q.transpose();
    layer.w_key = layer.w_query;
    model.layers.push_back(std::move(layer));
  }
  return model;
}

int ToyDenoiser::base_layer() const {
  for (std::size_t l = 0; l < layers.size(); ++l)
    if (layers[l].scale == 1) return static_cast<int>(l);
  throw ArgumentError("ToyDenoiser: no scale-1 layer");
}

Matrix denoiser_features(const LatentTensor& z) {
  const int n = z.shape().stitched_tokens();
  Matrix f(n, 2 * z.d());
  for (int row = 0; row < n; ++row) {
    const double keep = 1.0 - z.damage()[row];
    f.row(row).head(z.d()) = z.image().row(row) * keep;
    f.row(row).tail(z.d()) = z.noise().row(row);
  }
  return f;
}

Matrix pool_features(const Matrix& features, const GridShape& shape, int scale) {
  if (scale == 1) return features;
  if (shape.h % scale != 0 || shape.w % scale != 0)
    throw ArgumentError("pool_features: scale must divide the grid");
  const int fine_cols = shape.stitched_cols();
  const int coarse_rows = shape.h / scale;
  const int coarse_cols = fine_cols / scale;
  Matrix out = Matrix::Zero(coarse_rows * coarse_cols, features.cols());
  for (int i = 0; i < shape.h; ++i)
    for (int j = 0; j < fine_cols; ++j)
      out.row((i / scale) * coarse_cols + (j / scale)) += features.row(i * fine_cols + j);
  return out / (static_cast<double>(scale) * scale);
}

AttentionForward attention_forward(const ToyDenoiser& model, const LatentTensor& z,
                                   const AttentionMask* mask) {
  if (model.shape != z.shape())
    throw ArgumentError("attention_forward: model/latent shape mismatch");
  const GridShape& shape = model.shape;
  const Matrix features = denoiser_features(z);
  const GridDims fine = stitched_dims(shape);

  AttentionForward out;
  const int base = model.base_layer();
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    const Matrix fs = pool_features(features, shape, layer.scale);
    const GridDims grid{shape.h / layer.scale, fine.cols / layer.scale};

    AttentionMap logits;
    logits.query_grid = grid;
    logits.key_grid = grid;
    logits.kind = AttentionMap::Kind::Logits;
    logits.scores = (fs * layer.w_query) * (fs * layer.w_key).transpose();

    AttentionMask layer_mask;
    const AttentionMask* mask_ptr = nullptr;
    if (mask != nullptr) {
      layer_mask = guide::downsample_mask(*mask, layer.scale);
      mask_ptr = &layer_mask;
    }
    AttentionMap soft = guide::apply_mask(logits, mask_ptr, model.d_a);

    if (static_cast<int>(l) == base) out.base_stitched = soft;
    const AttentionMap rescaled =
        layer.scale == 1 ? soft : attn::rescale_map(soft, fine, fine);
    out.layer_tar2ref.push_back(attn::extract_tar2ref(rescaled, shape));
  }
  return out;
}

ForwardResult denoiser_forward(const ToyDenoiser& model, const Schedule& schedule,
                               const LatentTensor& z, int t, const AttentionMask* mask) {
  if (t < 1 || t > schedule.steps)
    throw ArgumentError("denoiser_forward: step index out of schedule range");
  const GridShape& shape = model.shape;

  AttentionForward af = attention_forward(model, z, mask);

  std::vector<int> ref_rows(static_cast<std::size_t>(shape.half_tokens()));
  for (int idx = 0; idx < shape.half_tokens(); ++idx)
    ref_rows[static_cast<std::size_t>(idx)] =
        flatten(unflatten_half(idx, shape), Half::Reference, shape);

  ForwardResult result;
  result.layer_tar2ref = std::move(af.layer_tar2ref);
  result.x0.resize(shape.stitched_tokens(), z.d());
  for (int row = 0; row < shape.stitched_tokens(); ++row) {
    if (z.damage()[row] == 0.0) {
      result.x0.row(row) = z.image().row(row);
      continue;
    }
    double total = 0.0;
    for (const int r : ref_rows) total += af.base_stitched.scores(row, r);
    Eigen::RowVectorXd blend = Eigen::RowVectorXd::Zero(z.d());
    if (total < 1e-300) {
      ++result.blend_fallbacks;
      const double uniform = 1.0 / static_cast<double>(shape.half_tokens());
      for (const int r : ref_rows) blend += uniform * z.image().row(r);
    } else {
      for (const int r : ref_rows)
        blend += (af.base_stitched.scores(row, r) / total) * z.image().row(r);
    }
    result.x0.row(row) = blend;
  }

  const double sab = schedule.sqrt_ab(t);
  const double somab = schedule.sqrt_one_minus_ab(t);
  result.eps = (z.noise() - sab * result.x0) / somab;
  return result;
}

RunMode parse_run_mode(const std::string& name) {
  if (name == "full") return RunMode::Full;
  if (name == "noacc") return RunMode::NoAcc;
  if (name == "nocyc") return RunMode::NoCyc;
  if (name == "maskonly") return RunMode::MaskOnly;
  if (name == "noguide") return RunMode::NoGuide;
  if (name == "nosmooth") return RunMode::NoSmooth;
  if (name == "nofilter") return RunMode::NoFilter;
  throw ArgumentError("unknown run mode: " + name);
}

std::string run_mode_name(RunMode mode) {
  switch (mode) {
    case RunMode::Full: return "full";
    case RunMode::NoAcc: return "noacc";
    case RunMode::NoCyc: return "nocyc";
    case RunMode::MaskOnly: return "maskonly";
    case RunMode::NoGuide: return "noguide";
    case RunMode::NoSmooth: return "nosmooth";
    case RunMode::NoFilter: return "nofilter";
  }
  throw ArgumentError("unknown run mode");
}

RunOptions RunOptions::for_mode(RunMode mode) {
  RunOptions o;
  switch (mode) {
    case RunMode::Full:
      break;
    case RunMode::NoAcc:
      o.policy = CorrPolicy::Replace;
      break;
    case RunMode::NoCyc:
      o.policy = CorrPolicy::Freeze;
      break;
    case RunMode::MaskOnly:
      o.filter = o.smooth = o.optimize = false;
      break;
    case RunMode::NoGuide:
      // Correspondence is still estimated (and refined) passively.
      o.attention_mask = o.optimize = false;
      break;
    case RunMode::NoSmooth:
      o.smooth = false;
      break;
    case RunMode::NoFilter:
      o.filter = false;
      break;
  }
  return o;
}

void PipelineConfig::validate(const GridShape& shape) const {
  guidance.validate();
  if (d_a < 1) throw ArgumentError("PipelineConfig: d_a must be >= 1");
  if (layer_scales.empty()) throw ArgumentError("PipelineConfig: layer_scales must be non-empty");
  for (const int s : layer_scales)
    if (s < 1 || shape.h % s != 0 || shape.w % s != 0)
      throw ArgumentError("PipelineConfig: layer scale must divide the grid");
}

RunResult run_inpaint(const synth::ScenePair& scene, const PipelineConfig& cfg, RunMode mode) {
  return run_inpaint(scene, cfg, RunOptions::for_mode(mode));
}

RunResult run_inpaint(const synth::ScenePair& scene, const PipelineConfig& cfg,
                      const RunOptions& options) {
  cfg.validate(scene.shape);
  const GridShape& shape = scene.shape;
  const int steps = cfg.guidance.steps_total;

  const Schedule schedule = build_schedule(steps);
  const ToyDenoiser model =
      ToyDenoiser::seeded(shape, scene.d, cfg.d_a, cfg.layer_scales, cfg.model_seed);
  LatentTensor z = synth::embed_stitched(scene);

  MatchingMap matching = MatchingMap::zero(shape);
  std::optional<CorrespondenceField> guidance_field;
  std::optional<CorrespondenceField> frozen_field;

  RunResult result{Matrix(), {}, z, matching, CorrespondenceField::empty(shape)};
  result.traces.reserve(static_cast<std::size_t>(steps));
  Matrix last_x0;

  for (int k = 0; k < steps; ++k) {
    const int t = steps - k;
    StepTrace trace;
    trace.t = t;
    trace.k = k;
    try {
      // Masking and latent optimization both guide this step using the
      // correspondence produced by the previous one; the first executed step
      // has no estimate yet and runs unguided.
      double t0 = now_ms();
      std::optional<AttentionMask> mask;
      if (options.attention_mask && k >= 1 && k < cfg.guidance.step_a && guidance_field) {
        mask = guide::build_attention_mask(*guidance_field, cfg.guidance, shape);
        if (cfg.restrict_to_masked) mask = guide::restrict_mask_rows(*mask, z.damage());
        trace.mask_applied = true;
      }
      trace.timing.mask_ms = now_ms() - t0;

      t0 = now_ms();
      if (options.optimize && k >= 1 && k < cfg.guidance.step_o && guidance_field) {
        const guide::LatentGradient grad = guide::grad_latent(
            model, z, t, *guidance_field, mask ? &*mask : nullptr);
        z = guide::optimize_latent(z, grad.noise_grad, cfg.guidance);
        trace.objective = grad.report;
        trace.optimized = true;
      }
      trace.timing.opt_ms = now_ms() - t0;

      t0 = now_ms();
      ForwardResult fw = denoiser_forward(model, schedule, z, t, mask ? &*mask : nullptr);
      z = z.with_noise(schedule.sqrt_ab(t - 1) * fw.x0 + schedule.sqrt_one_minus_ab(t - 1) * fw.eps);
      trace.timing.denoise_ms = now_ms() - t0;
      trace.blend_fallbacks = fw.blend_fallbacks;

      t0 = now_ms();
      const AttentionMap aggregated = attn::aggregate_layers(fw.layer_tar2ref);
      if (options.policy == CorrPolicy::Replace)
        matching = MatchingMap{shape, aggregated.scores};
      else
        matching = attn::accumulate_matching(matching, aggregated);

      CorrespondenceField estimated = corr::estimate(matching);
      if (options.filter) estimated = corr::filter_outliers(estimated, cfg.guidance.outlier_threshold);
      if (options.smooth) estimated = corr::smooth(estimated, cfg.guidance.win_s);
      if (options.policy == CorrPolicy::Freeze) {
        if (!frozen_field) frozen_field = estimated;
        guidance_field = frozen_field;
      } else {
        guidance_field = estimated;
      }
      trace.timing.corr_ms = now_ms() - t0;

      trace.layer_tar2ref = std::move(fw.layer_tar2ref);
      trace.field = *guidance_field;
      const auto [correct, total] = eval::count_correct(*guidance_field, scene);
      trace.correct = correct;
      trace.correct_total = total;
      last_x0 = std::move(fw.x0);
    } catch (const NumericError& e) {
      throw NumericError("run_inpaint: step t=" + std::to_string(t) +
                         " (k=" + std::to_string(k) + "): " + e.what());
    }
    result.traces.push_back(std::move(trace));
  }

  result.restored_target.resize(shape.half_tokens(), scene.d);
  for (int idx = 0; idx < shape.half_tokens(); ++idx)
    result.restored_target.row(idx) =
        last_x0.row(flatten(unflatten_half(idx, shape), Half::Target, shape));
  result.final_latent = z;
  result.final_matching = matching;
  result.final_field = *guidance_field;
  return result;
}

}  // namespace corrguide::toydiff
