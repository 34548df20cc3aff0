// SPDX-License-Identifier: Apache-2.0
//
// Reconstruction metrics, the correct-correspondence count, the ablation
// harness comparing guidance component subsets and update policies, and
// report emission.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "corrguide/synthdata.hpp"
#include "corrguide/toydiff.hpp"

namespace corrguide::eval {

// Affine map of latent values onto [0, 1] using recorded scene extrema,
// clamped at the ends.
Matrix to_unit(const Matrix& x, double vmin, double vmax);

// 10 log10(1 / MSE) over the selected tokens (all tokens when region is
// null), capped at 99 dB. Inputs must already live in [0, 1].
double psnr(const Matrix& a, const Matrix& b, const Vector* region);

// Mean local SSIM with a uniform window and standard constants, averaged
// over channels. Grids smaller than the window fall back to one global
// window.
double ssim(const Matrix& a, const Matrix& b, const GridShape& shape, int window = 8,
            double k1 = 0.01, double k2 = 0.03);

// Correct correspondences over overlap tokens: an Inlier within Chebyshev
// distance 1 of ground truth counts as correct; Outlier and Unmatched
// overlap tokens count against the total. Returns (correct, total).
std::pair<int, int> count_correct(const CorrespondenceField& field,
                                  const synth::ScenePair& scene);

// Scene family used by the harness: per-seed random shifts up to shift_max
// (never the identity), plus the standard mask protocol.
struct SceneSuiteParams {
  GridShape shape{8, 8};
  int d = 4;
  int shift_max = 2;
  double texture_corr_len = 2.0;
  double texture_fine_amp = 0.35;
  synth::MaskParams mask;
};

synth::ScenePair suite_scene(std::uint64_t seed, const SceneSuiteParams& params);

// One ablation row: a named component subset / update policy.
struct RowSpec {
  std::string name;
  toydiff::RunOptions options;
};

// The standard seven rows: noguide, maskonly, maskfilter, maskfiltersmooth,
// full, noacc, nocyc.
std::vector<RowSpec> default_rows();
RowSpec row_spec(const std::string& name);

struct SeedFailure {
  std::uint64_t seed = 0;
  std::string error;
};

struct ModeResult {
  std::string mode;
  int completed = 0;
  double psnr_mask = 0.0;
  double psnr_all = 0.0;
  double ssim = 0.0;
  double correct_final = 0.0;
  std::vector<double> correct_curve;  // per-step mean over completed seeds
  double step_ms = 0.0;
  double mask_ms = 0.0;
  double opt_ms = 0.0;
  double denoise_ms = 0.0;
  double corr_ms = 0.0;
  std::vector<SeedFailure> failures;
};

struct Report {
  int schema_version = 1;
  int steps_total = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<ModeResult> modes;
};

// Runs every row over every seed. Individual run failures are recorded and
// the suite continues. Deterministic given the seed list; `jobs` > 1
// distributes independent runs across threads (timings then overlap, so the
// default stays single-threaded).
Report ablation_suite(const std::vector<std::uint64_t>& seeds, const toydiff::PipelineConfig& cfg,
                      const SceneSuiteParams& scenes = SceneSuiteParams{},
                      const std::vector<RowSpec>* rows = nullptr, int jobs = 1);

void emit_report_json(const Report& report, const std::string& path);
void emit_report_csv(const Report& report, const std::string& path);
// One curve_<mode>.csv per mode with "step,correct_mean" rows.
void write_mode_curves(const Report& report, const std::string& dir);

}  // namespace corrguide::eval
