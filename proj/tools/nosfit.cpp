#include <CLI11.hpp>

#include <iostream>

#include "nos/commands.hpp"
#include "nos/version.hpp"

int main(int argc, char** argv) {
  CLI::App app{"nosfit: latent proportion-indicator estimation from multi-source "
               "survey data"};
  app.set_version_flag("--version", nos::kVersion);
  app.require_subcommand(1);

  std::string config_path, design_path, output_dir;

  auto* pre = app.add_subcommand("preprocess", "classify possibly-outlying observations");
  pre->add_option("--config", config_path, "run configuration (JSON)")->required();

  auto* fit = app.add_subcommand("fit", "run the full Bayesian fit");
  fit->add_option("--config", config_path, "run configuration (JSON)")->required();

  auto* sim = app.add_subcommand("simulate", "generate synthetic datasets");
  sim->add_option("--design", design_path, "simulation design (JSON)")->required();
  sim->add_option("--out", output_dir, "output directory")->required();

  auto* summ = app.add_subcommand("summarize", "rebuild the summary from stored draws");
  summ->add_option("--config", config_path, "run configuration (JSON)")->required();

  nos::CheckOptions check_opts;
  auto* check = app.add_subcommand("check", "run the built-in oracle self-checks");
  check->add_option("--instances", check_opts.instances,
                    "likelihood-equivalence instances");
  check->add_option("--gradient-points", check_opts.gradient_points,
                    "gradient-check points");
  check->add_option("--seed", check_opts.seed, "check RNG seed");
  check->add_option("--perturb-gradient-coord", check_opts.perturb_coordinate,
                    "fault-injection hook: gradient coordinate to perturb")
      ->group("");
  check->add_option("--perturb-eps", check_opts.perturb_eps,
                    "fault-injection hook: perturbation size")
      ->group("");

  CLI11_PARSE(app, argc, argv);

  try {
    if (pre->parsed()) {
      return nos::cmd_preprocess(nos::load_run_config(config_path), std::cerr);
    }
    if (fit->parsed()) {
      return nos::cmd_fit(nos::load_run_config(config_path), std::cerr);
    }
    if (sim->parsed()) {
      return nos::cmd_simulate(design_path, output_dir, std::cerr);
    }
    if (summ->parsed()) {
      return nos::cmd_summarize(nos::load_run_config(config_path), std::cerr);
    }
    if (check->parsed()) {
      return nos::cmd_check(check_opts, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
