// SPDX-License-Identifier: Apache-2.0
//
// Batch command implementations behind the corrguide binary. Each returns a
// process exit code; argument parsing lives in the tool's main.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "corrguide/eval.hpp"
#include "corrguide/toydiff.hpp"

namespace corrguide::cli {

// Versioned JSON config: every field optional, `{}` is a valid file. step_a
// defaults to steps_total and step_o to ceil(0.6 * steps_total) when absent.
struct FileConfig {
  toydiff::PipelineConfig pipeline;
  eval::SceneSuiteParams scenes;
};

// Empty path yields the defaults.
FileConfig load_config(const std::string& path);

struct GenArgs {
  std::uint64_t seed_start = 0;
  int count = 500;
  std::string out_dir = ".";
  std::string config_path;
};
int cmd_gen(const GenArgs& args);

struct RunArgs {
  std::string scene_path;
  std::string config_path;
  std::string mode = "full";
  std::string trace_path;
  // Wall-clock fields vary between runs, so they are only serialized on
  // request; default traces are byte-reproducible.
  bool trace_timing = false;
};
int cmd_run(const RunArgs& args);

struct AblateArgs {
  std::uint64_t seed_start = 1;
  int seed_count = 50;
  std::string config_path;
  std::string out_dir = ".";
  std::vector<std::string> modes;  // empty = all rows
  int jobs = 1;
};
int cmd_ablate(const AblateArgs& args);

struct GradcheckArgs {
  std::uint64_t seed = 1;
  std::string config_path;
  double fd_step = 1e-5;
  double tolerance = 1e-4;
  bool corrupt = false;  // negative-control hook for tests
};
int cmd_gradcheck(const GradcheckArgs& args);

}  // namespace corrguide::cli
