// SPDX-License-Identifier: Apache-2.0
//
// corrguide — correspondence-guided inpainting sandbox CLI.
//
// Exit codes: 0 success, 2 usage/parse/I-O error, 3 numeric failure.
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "corrguide/cli.hpp"

int main(int argc, char** argv) {
  using namespace corrguide;

  CLI::App app{"corrguide: correspondence-guided inpainting sandbox"};
  app.require_subcommand(1);

  cli::GenArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen", "generate synthetic scene pairs");
  gen->add_option("--seed", gen_args.seed_start, "first seed");
  gen->add_option("--count", gen_args.count, "number of scene pairs")->default_val(500);
  gen->add_option("--out", gen_args.out_dir, "output directory")->default_val(".");
  gen->add_option("--config", gen_args.config_path, "JSON config file");

  cli::RunArgs run_args;
  CLI::App* run = app.add_subcommand("run", "run one inpainting trajectory");
  run->add_option("scene", run_args.scene_path, "scene file (.crfs)")->required();
  run->add_option("--config", run_args.config_path, "JSON config file");
  run->add_option("--mode", run_args.mode,
                  "full|noacc|nocyc|maskonly|noguide|nosmooth|nofilter")
      ->default_val("full");
  run->add_option("--out", run_args.trace_path, "trace output file (JSON lines)");
  run->add_flag("--trace-timing", run_args.trace_timing,
                "include wall-clock timings in the trace (not byte-reproducible)");

  cli::AblateArgs ablate_args;
  CLI::App* ablate = app.add_subcommand("ablate", "run the ablation suite");
  ablate->add_option("--seed", ablate_args.seed_start, "first seed")->default_val(1);
  ablate->add_option("--count", ablate_args.seed_count, "number of seeds")->default_val(50);
  ablate->add_option("--config", ablate_args.config_path, "JSON config file");
  ablate->add_option("--out", ablate_args.out_dir, "output directory")->default_val(".");
  ablate->add_option("--modes", ablate_args.modes,
                     "comma-separated row subset (noguide,maskonly,maskfilter,"
                     "maskfiltersmooth,full,noacc,nocyc)")
      ->delimiter(',');
  ablate->add_option("--jobs", ablate_args.jobs, "parallel runs")->default_val(1);

  cli::GradcheckArgs grad_args;
  CLI::App* gradcheck = app.add_subcommand("gradcheck",
                                           "compare the latent gradient to finite differences");
  gradcheck->add_option("--seed", grad_args.seed, "scene seed")->default_val(1);
  gradcheck->add_option("--config", grad_args.config_path, "JSON config file");
  gradcheck->add_flag("--corrupt", grad_args.corrupt, "corrupt the gradient (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cli::cmd_gen(gen_args);
    if (run->parsed()) return cli::cmd_run(run_args);
    if (ablate->parsed()) return cli::cmd_ablate(ablate_args);
    if (gradcheck->parsed()) return cli::cmd_gradcheck(grad_args);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 1;
  }
  return 2;
}
