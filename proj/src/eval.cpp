// SPDX-License-Identifier: Apache-2.0
#include "corrguide/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "json.hpp"

namespace corrguide::eval {

namespace {
using ordered_json = nlohmann::ordered_json;
}

Matrix to_unit(const Matrix& x, double vmin, double vmax) {
  if (!(vmax > vmin)) throw ArgumentError("to_unit: vmax must exceed vmin");
  return ((x.array() - vmin) / (vmax - vmin)).cwiseMax(0.0).cwiseMin(1.0).matrix();
}

double psnr(const Matrix& a, const Matrix& b, const Vector* region) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ArgumentError("psnr: shape mismatch");
  if (region != nullptr && region->size() != a.rows())
    throw ArgumentError("psnr: region size mismatch");
  double sum = 0.0;
  long count = 0;
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    if (region != nullptr && (*region)[r] <= 0.5) continue;
    sum += (a.row(r) - b.row(r)).squaredNorm();
    count += a.cols();
  }
  if (count == 0) throw ArgumentError("psnr: empty region");
  const double mse = sum / static_cast<double>(count);
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

namespace {

double ssim_window(const Matrix& a, const Matrix& b, const GridShape& shape, int c, int i0,
                   int j0, int wi, int wj, double c1, double c2) {
  const int n = wi * wj;
  double ma = 0.0, mb = 0.0;
  for (int i = i0; i < i0 + wi; ++i)
    for (int j = j0; j < j0 + wj; ++j) {
      ma += a(i * shape.w + j, c);
      mb += b(i * shape.w + j, c);
    }
  ma /= n;
  mb /= n;
  double va = 0.0, vb = 0.0, cov = 0.0;
  for (int i = i0; i < i0 + wi; ++i)
    for (int j = j0; j < j0 + wj; ++j) {
      const double da = a(i * shape.w + j, c) - ma;
      const double db = b(i * shape.w + j, c) - mb;
      va += da * da;
      vb += db * db;
      cov += da * db;
    }
  va /= n;
  vb /= n;
  cov /= n;
  return ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
         ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

}  // namespace

double ssim(const Matrix& a, const Matrix& b, const GridShape& shape, int window, double k1,
            double k2) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() != shape.half_tokens())
    throw ArgumentError("ssim: shape mismatch");
  const double c1 = (k1 * 1.0) * (k1 * 1.0);
  const double c2 = (k2 * 1.0) * (k2 * 1.0);
  const int wi = std::min(window, shape.h);
  const int wj = std::min(window, shape.w);
  double total = 0.0;
  long count = 0;
  for (int c = 0; c < a.cols(); ++c) {
    for (int i0 = 0; i0 + wi <= shape.h; ++i0) {
      for (int j0 = 0; j0 + wj <= shape.w; ++j0) {
        total += ssim_window(a, b, shape, c, i0, j0, wi, wj, c1, c2);
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

std::pair<int, int> count_correct(const CorrespondenceField& field,
                                  const synth::ScenePair& scene) {
  if (field.shape != scene.shape) throw ArgumentError("count_correct: shape mismatch");
  int correct = 0;
  int total = 0;
  for (int idx = 0; idx < scene.shape.half_tokens(); ++idx) {
    if (scene.gt_flat[idx] < 0) continue;
    ++total;
    if (field.status[idx] != CorrStatus::Inlier) continue;
    const TokenCoord gt = unflatten_half(scene.gt_flat[idx], scene.shape);
    if (chebyshev(field.target[idx], gt) <= 1) ++correct;
  }
  return {correct, total};
}

synth::ScenePair suite_scene(std::uint64_t seed, const SceneSuiteParams& params) {
  synth::SceneParams sp;
  sp.shape = params.shape;
  sp.d = params.d;
  sp.texture_corr_len = params.texture_corr_len;
  sp.texture_fine_amp = params.texture_fine_amp;
  SplitMix64 rng = SplitMix64(seed).fork(17);
  const int cap_i = std::min(params.shift_max, params.shape.h / 2);
  const int cap_j = std::min(params.shift_max, params.shape.w / 2);
  sp.shift_i = rng.next_int(-cap_i, cap_i);
  sp.shift_j = rng.next_int(-cap_j, cap_j);
  if (sp.shift_i == 0 && sp.shift_j == 0) sp.shift_j = 1;
  return synth::generate_scene(seed, sp, params.mask);
}

std::vector<RowSpec> default_rows() {
  using toydiff::RunMode;
  using toydiff::RunOptions;
  std::vector<RowSpec> rows;
  rows.push_back({"noguide", RunOptions::for_mode(RunMode::NoGuide)});
  rows.push_back({"maskonly", RunOptions::for_mode(RunMode::MaskOnly)});
  RunOptions mask_filter = RunOptions::for_mode(RunMode::MaskOnly);
  mask_filter.filter = true;
  rows.push_back({"maskfilter", mask_filter});
  RunOptions mask_filter_smooth = mask_filter;
  mask_filter_smooth.smooth = true;
  rows.push_back({"maskfiltersmooth", mask_filter_smooth});
  rows.push_back({"full", RunOptions::for_mode(RunMode::Full)});
  rows.push_back({"noacc", RunOptions::for_mode(RunMode::NoAcc)});
  rows.push_back({"nocyc", RunOptions::for_mode(RunMode::NoCyc)});
  return rows;
}

RowSpec row_spec(const std::string& name) {
  for (RowSpec& row : default_rows())
    if (row.name == name) return row;
  throw ArgumentError("unknown ablation row: " + name);
}

namespace {

struct RunMetrics {
  bool ok = false;
  std::string error;
  double psnr_mask = 0.0;
  double psnr_all = 0.0;
  double ssim_value = 0.0;
  int correct_final = 0;
  std::vector<int> curve;
  toydiff::StepTiming timing;  // mean per step
};

RunMetrics run_one(const synth::ScenePair& scene, const toydiff::PipelineConfig& cfg,
                   const toydiff::RunOptions& options) {
  RunMetrics m;
  try {
    const toydiff::RunResult result = toydiff::run_inpaint(scene, cfg, options);
    const Matrix restored = to_unit(result.restored_target, scene.value_min, scene.value_max);
    const Matrix truth = to_unit(scene.target, scene.value_min, scene.value_max);
    m.psnr_mask = psnr(restored, truth, &scene.inpaint);
    m.psnr_all = psnr(restored, truth, nullptr);
    m.ssim_value = ssim(restored, truth, scene.shape);
    m.correct_final = result.traces.back().correct;
    m.curve.reserve(result.traces.size());
    for (const auto& trace : result.traces) {
      m.curve.push_back(trace.correct);
      m.timing.mask_ms += trace.timing.mask_ms;
      m.timing.opt_ms += trace.timing.opt_ms;
      m.timing.denoise_ms += trace.timing.denoise_ms;
      m.timing.corr_ms += trace.timing.corr_ms;
    }
    const auto steps = static_cast<double>(result.traces.size());
    m.timing.mask_ms /= steps;
    m.timing.opt_ms /= steps;
    m.timing.denoise_ms /= steps;
    m.timing.corr_ms /= steps;
    m.ok = true;
  } catch (const Error& e) {
    m.error = e.what();
  }
  return m;
}

}  // namespace

Report ablation_suite(const std::vector<std::uint64_t>& seeds, const toydiff::PipelineConfig& cfg,
                      const SceneSuiteParams& scenes, const std::vector<RowSpec>* rows,
                      int jobs) {
  if (seeds.empty()) throw ArgumentError("ablation_suite: no seeds given");
  if (seeds.size() < 10)
    log(LogLevel::Info, "ablation_suite: fewer than 10 seeds; statistics will be noisy");
  const std::vector<RowSpec> specs = rows != nullptr ? *rows : default_rows();

  Report report;
  report.steps_total = cfg.guidance.steps_total;
  report.seeds = seeds;

  // All (mode, seed) runs are independent; collect then reduce.
  std::vector<std::vector<RunMetrics>> metrics(
      specs.size(), std::vector<RunMetrics>(seeds.size()));
  struct Task {
    std::size_t mode;
    std::size_t seed;
  };
  std::vector<Task> tasks;
  for (std::size_t mi = 0; mi < specs.size(); ++mi)
    for (std::size_t si = 0; si < seeds.size(); ++si) tasks.push_back({mi, si});

  const auto worker_count = std::max(1, jobs);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t idx = next.fetch_add(1);
      if (idx >= tasks.size()) break;
      const Task task = tasks[idx];
      const synth::ScenePair scene = suite_scene(seeds[task.seed], scenes);
      metrics[task.mode][task.seed] = run_one(scene, cfg, specs[task.mode].options);
    }
  };
  if (worker_count == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < worker_count; ++i) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }

  for (std::size_t mi = 0; mi < specs.size(); ++mi) {
    ModeResult row;
    row.mode = specs[mi].name;
    row.correct_curve.assign(static_cast<std::size_t>(report.steps_total), 0.0);
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      const RunMetrics& m = metrics[mi][si];
      if (!m.ok) {
        row.failures.push_back({seeds[si], m.error});
        continue;
      }
      ++row.completed;
      row.psnr_mask += m.psnr_mask;
      row.psnr_all += m.psnr_all;
      row.ssim += m.ssim_value;
      row.correct_final += m.correct_final;
      row.mask_ms += m.timing.mask_ms;
      row.opt_ms += m.timing.opt_ms;
      row.denoise_ms += m.timing.denoise_ms;
      row.corr_ms += m.timing.corr_ms;
      for (std::size_t s = 0; s < m.curve.size() && s < row.correct_curve.size(); ++s)
        row.correct_curve[s] += m.curve[s];
    }
    if (row.completed > 0) {
      const double n = row.completed;
      row.psnr_mask /= n;
      row.psnr_all /= n;
      row.ssim /= n;
      row.correct_final /= n;
      row.mask_ms /= n;
      row.opt_ms /= n;
      row.denoise_ms /= n;
      row.corr_ms /= n;
      for (double& v : row.correct_curve) v /= n;
    }
    row.step_ms = row.mask_ms + row.opt_ms + row.denoise_ms + row.corr_ms;
    report.modes.push_back(std::move(row));
  }
  return report;
}

namespace {

ordered_json report_to_json(const Report& report) {
  ordered_json j;
  j["schema_version"] = report.schema_version;
  j["steps_total"] = report.steps_total;
  j["seeds"] = report.seeds;
  j["lpips"] = nullptr;  // requires a pretrained network; out of scope
  j["modes"] = ordered_json::array();
  for (const ModeResult& row : report.modes) {
    ordered_json r;
    r["mode"] = row.mode;
    r["completed"] = row.completed;
    r["psnr_mask"] = row.psnr_mask;
    r["psnr_all"] = row.psnr_all;
    r["ssim"] = row.ssim;
    r["correct_final"] = row.correct_final;
    r["correct_curve"] = row.correct_curve;
    r["timing"] = {{"step_ms", row.step_ms},
                   {"mask_ms", row.mask_ms},
                   {"opt_ms", row.opt_ms},
                   {"denoise_ms", row.denoise_ms},
                   {"corr_ms", row.corr_ms}};
    r["failures"] = ordered_json::array();
    for (const SeedFailure& f : row.failures)
      r["failures"].push_back({{"seed", f.seed}, {"error", f.error}});
    j["modes"].push_back(std::move(r));
  }
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void emit_report_json(const Report& report, const std::string& path) {
  write_text(path, report_to_json(report).dump(2) + "\n");
}

void emit_report_csv(const Report& report, const std::string& path) {
  std::string csv =
      "mode,completed,psnr_mask,psnr_all,ssim,correct_final,step_ms,mask_ms,opt_ms,denoise_ms,"
      "corr_ms\n";
  for (const ModeResult& row : report.modes) {
    csv += row.mode;
    csv += "," + std::to_string(row.completed);
    csv += "," + format_double(row.psnr_mask);
    csv += "," + format_double(row.psnr_all);
    csv += "," + format_double(row.ssim);
    csv += "," + format_double(row.correct_final);
    csv += "," + format_double(row.step_ms);
    csv += "," + format_double(row.mask_ms);
    csv += "," + format_double(row.opt_ms);
    csv += "," + format_double(row.denoise_ms);
    csv += "," + format_double(row.corr_ms);
    csv += "\n";
  }
  write_text(path, csv);
}

void write_mode_curves(const Report& report, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (const ModeResult& row : report.modes) {
    std::string csv = "step,correct_mean\n";
    for (std::size_t s = 0; s < row.correct_curve.size(); ++s)
      csv += std::to_string(s) + "," + format_double(row.correct_curve[s]) + "\n";
    write_text((std::filesystem::path(dir) / ("curve_" + row.mode + ".csv")).string(), csv);
  }
}

}  // namespace corrguide::eval
