// SPDX-License-Identifier: Apache-2.0
#include "corrguide/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "corrguide/attn.hpp"
#include "corrguide/corr.hpp"
#include "corrguide/guide.hpp"

namespace corrguide::cli {

namespace {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

FileConfig load_config(const std::string& path) {
  FileConfig cfg;
  bool have_step_a = false;
  bool have_step_o = false;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("config file not found: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw IoError("config parse error in " + path + ": " + e.what());
    }
    try {
      int version = 1;
      read_field(j, "version", version);
      if (version != 1) throw ArgumentError("unsupported config version");
      auto& g = cfg.pipeline.guidance;
      read_field(j, "steps_total", g.steps_total);
      have_step_a = j.contains("step_a");
      have_step_o = j.contains("step_o");
      read_field(j, "step_a", g.step_a);
      read_field(j, "step_o", g.step_o);
      read_field(j, "win_a", g.win_a);
      read_field(j, "win_s", g.win_s);
      read_field(j, "str_a", g.str_a);
      read_field(j, "str_o", g.str_o);
      read_field(j, "outlier_threshold", g.outlier_threshold);
      read_field(j, "d_a", cfg.pipeline.d_a);
      read_field(j, "layer_scales", cfg.pipeline.layer_scales);
      read_field(j, "model_seed", cfg.pipeline.model_seed);
      read_field(j, "restrict_to_masked", cfg.pipeline.restrict_to_masked);
      if (j.contains("scene")) {
        const auto& s = j.at("scene");
        int h = cfg.scenes.shape.h;
        int w = cfg.scenes.shape.w;
        read_field(s, "h", h);
        read_field(s, "w", w);
        cfg.scenes.shape = GridShape(h, w);
        read_field(s, "d", cfg.scenes.d);
        read_field(s, "shift_max", cfg.scenes.shift_max);
        read_field(s, "texture_corr_len", cfg.scenes.texture_corr_len);
        read_field(s, "texture_fine_amp", cfg.scenes.texture_fine_amp);
        read_field(s, "mask_ratio_lo", cfg.scenes.mask.ratio_lo);
        read_field(s, "mask_ratio_hi", cfg.scenes.mask.ratio_hi);
        read_field(s, "mask_min_strokes", cfg.scenes.mask.min_strokes);
        read_field(s, "mask_max_strokes", cfg.scenes.mask.max_strokes);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ArgumentError("config field error in " + path + ": " + e.what());
    }
  }
  auto& g = cfg.pipeline.guidance;
  if (!have_step_a) g.step_a = g.steps_total;
  if (!have_step_o) g.step_o = static_cast<int>(std::ceil(0.6 * g.steps_total));
  g.validate();
  return cfg;
}

int cmd_gen(const GenArgs& args) {
  const FileConfig cfg = load_config(args.config_path);
  if (args.count < 1) throw ArgumentError("gen: count must be >= 1");
  fs::create_directories(args.out_dir);
  for (int i = 0; i < args.count; ++i) {
    const std::uint64_t seed = args.seed_start + static_cast<std::uint64_t>(i);
    const synth::ScenePair scene = eval::suite_scene(seed, cfg.scenes);
    char name[64];
    std::snprintf(name, sizeof(name), "scene_%06llu.crfs",
                  static_cast<unsigned long long>(seed));
    const std::string path = (fs::path(args.out_dir) / name).string();
    synth::save_scene(scene, path);
    std::printf("%s seed=%llu shift=(%d,%d) mask_ratio=%.4f\n", name,
                static_cast<unsigned long long>(seed), scene.params.shift_i,
                scene.params.shift_j, scene.inpaint.sum() / scene.shape.half_tokens());
  }
  std::printf("wrote %d scene pair(s) to %s\n", args.count, args.out_dir.c_str());
  return 0;
}

namespace {

ordered_json field_to_json(const CorrespondenceField& field) {
  ordered_json j;
  std::vector<int> status, ti, tj;
  const int n = field.shape.half_tokens();
  status.reserve(n);
  ti.reserve(n);
  tj.reserve(n);
  for (int idx = 0; idx < n; ++idx) {
    status.push_back(static_cast<int>(field.status[idx]));
    ti.push_back(field.target[idx].i);
    tj.push_back(field.target[idx].j);
  }
  j["status"] = status;
  j["ti"] = ti;
  j["tj"] = tj;
  j["consensus"] = std::vector<double>(field.consensus.data(),
                                       field.consensus.data() + field.consensus.size());
  return j;
}

ordered_json trace_to_json(const toydiff::StepTrace& trace, bool with_timing) {
  ordered_json j;
  j["schema"] = 1;
  j["t"] = trace.t;
  j["k"] = trace.k;
  j["mask_applied"] = trace.mask_applied;
  j["optimized"] = trace.optimized;
  j["blend_fallbacks"] = trace.blend_fallbacks;
  j["correct"] = trace.correct;
  j["correct_total"] = trace.correct_total;
  if (trace.objective) {
    j["objective"] = {{"per_layer_loss", trace.objective->per_layer_loss},
                      {"total_loss", trace.objective->total_loss},
                      {"grad_norm", trace.objective->grad_norm}};
  } else {
    j["objective"] = nullptr;
  }
  j["corr"] = field_to_json(trace.field);
  ordered_json layers = ordered_json::array();
  for (const AttentionMap& map : trace.layer_tar2ref) {
    ordered_json rows = ordered_json::array();
    for (Eigen::Index r = 0; r < map.scores.rows(); ++r) {
      std::vector<double> row(map.scores.cols());
      for (Eigen::Index c = 0; c < map.scores.cols(); ++c) row[c] = map.scores(r, c);
      rows.push_back(row);
    }
    layers.push_back(std::move(rows));
  }
  j["attn"] = std::move(layers);
  if (with_timing) {
    j["timing"] = {{"mask_ms", trace.timing.mask_ms},
                   {"opt_ms", trace.timing.opt_ms},
                   {"denoise_ms", trace.timing.denoise_ms},
                   {"corr_ms", trace.timing.corr_ms}};
  }
  return j;
}

}  // namespace

int cmd_run(const RunArgs& args) {
  const FileConfig cfg = load_config(args.config_path);
  if (!fs::exists(args.scene_path)) throw IoError("scene file not found: " + args.scene_path);
  const synth::ScenePair scene = synth::load_scene(args.scene_path);
  const toydiff::RunMode mode = toydiff::parse_run_mode(args.mode);

  const double t0 = now_ms();
  const toydiff::RunResult result = toydiff::run_inpaint(scene, cfg.pipeline, mode);
  const double elapsed = now_ms() - t0;

  if (!args.trace_path.empty()) {
    std::ofstream out(args.trace_path, std::ios::trunc);
    if (!out) throw IoError("cannot open trace file: " + args.trace_path);
    for (const toydiff::StepTrace& trace : result.traces)
      out << trace_to_json(trace, args.trace_timing).dump() << '\n';
    if (!out) throw IoError("trace write failed: " + args.trace_path);
  }

  const Matrix restored = eval::to_unit(result.restored_target, scene.value_min, scene.value_max);
  const Matrix truth = eval::to_unit(scene.target, scene.value_min, scene.value_max);
  const double psnr_mask = eval::psnr(restored, truth, &scene.inpaint);
  const double psnr_all = eval::psnr(restored, truth, nullptr);
  const double ssim_value = eval::ssim(restored, truth, scene.shape);
  const toydiff::StepTrace& last = result.traces.back();
  std::printf("mode=%s steps=%d psnr_mask=%.4f psnr_all=%.4f ssim=%.4f correct=%d/%d time_ms=%.1f\n",
              args.mode.c_str(), cfg.pipeline.guidance.steps_total, psnr_mask, psnr_all,
              ssim_value, last.correct, last.correct_total, elapsed);
  return 0;
}

int cmd_ablate(const AblateArgs& args) {
  const FileConfig cfg = load_config(args.config_path);
  if (args.seed_count < 1) throw ArgumentError("ablate: seed count must be >= 1");
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < args.seed_count; ++i)
    seeds.push_back(args.seed_start + static_cast<std::uint64_t>(i));

  std::vector<eval::RowSpec> rows;
  if (!args.modes.empty()) {
    for (const std::string& name : args.modes) rows.push_back(eval::row_spec(name));
  } else {
    rows = eval::default_rows();
  }

  const eval::Report report =
      eval::ablation_suite(seeds, cfg.pipeline, cfg.scenes, &rows, args.jobs);

  fs::create_directories(args.out_dir);
  eval::emit_report_json(report, (fs::path(args.out_dir) / "report.json").string());
  eval::emit_report_csv(report, (fs::path(args.out_dir) / "report.csv").string());
  eval::write_mode_curves(report, (fs::path(args.out_dir) / "curves").string());

  for (const eval::ModeResult& row : report.modes)
    std::printf("%-18s completed=%d psnr_mask=%.3f ssim=%.4f correct_final=%.2f step_ms=%.3f\n",
                row.mode.c_str(), row.completed, row.psnr_mask, row.ssim, row.correct_final,
                row.step_ms);
  return 0;
}

int cmd_gradcheck(const GradcheckArgs& args) {
  const FileConfig cfg = load_config(args.config_path);
  const synth::ScenePair scene = eval::suite_scene(args.seed, cfg.scenes);
  const toydiff::ToyDenoiser model = toydiff::ToyDenoiser::seeded(
      scene.shape, scene.d, cfg.pipeline.d_a, cfg.pipeline.layer_scales, cfg.pipeline.model_seed);
  const toydiff::Schedule schedule = toydiff::build_schedule(cfg.pipeline.guidance.steps_total);

  // Run a few unguided steps so the checked point has a realistic mixture of
  // inlier, outlier, and unmatched tokens.
  LatentTensor z = synth::embed_stitched(scene);
  MatchingMap matching = MatchingMap::zero(scene.shape);
  const int warmup = std::min(3, schedule.steps - 1);
  for (int k = 0; k < warmup; ++k) {
    const int t = schedule.steps - k;
    const toydiff::ForwardResult fw = toydiff::denoiser_forward(model, schedule, z, t, nullptr);
    z = z.with_noise(schedule.sqrt_ab(t - 1) * fw.x0 +
                     schedule.sqrt_one_minus_ab(t - 1) * fw.eps);
    matching = attn::accumulate_matching(matching, attn::aggregate_layers(fw.layer_tar2ref));
  }
  CorrespondenceField field = corr::estimate(matching);
  field = corr::filter_outliers(field, cfg.pipeline.guidance.outlier_threshold);
  field = corr::smooth(field, cfg.pipeline.guidance.win_s);
  const AttentionMask mask =
      guide::build_attention_mask(field, cfg.pipeline.guidance, scene.shape);

  const int t = schedule.steps - warmup;
  guide::LatentGradient grad = guide::grad_latent(model, z, t, field, &mask);
  if (args.corrupt) grad.noise_grad(0, 0) += 1e-3;
  const Matrix fd =
      guide::finite_difference_gradient(model, z, t, field, &mask, args.fd_step);

  const double max_rel = guide::gradient_max_rel_error(grad.noise_grad, fd);
  std::printf("gradcheck: seed=%llu entries=%lld max_rel_err=%.3e tolerance=%.1e %s\n",
              static_cast<unsigned long long>(args.seed),
              static_cast<long long>(fd.size()), max_rel, args.tolerance,
              max_rel < args.tolerance ? "pass" : "FAIL");
  return max_rel < args.tolerance ? 0 : 3;
}

}  // namespace corrguide::cli
