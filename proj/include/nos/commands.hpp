#pragma once

#include <iosfwd>
#include <string>

#include "nos/io.hpp"

namespace nos {

/// Batch entry points behind the CLI subcommands. Each returns a process
/// exit code and logs progress to `log`.
int cmd_preprocess(const RunConfig& config, std::ostream& log);
int cmd_fit(const RunConfig& config, std::ostream& log);
int cmd_simulate(const std::string& design_path, const std::string& output_dir,
                 std::ostream& log);
int cmd_summarize(const RunConfig& config, std::ostream& log);

struct CheckOptions {
  int instances = 200;        // likelihood-equivalence instances
  int gradient_points = 20;   // gradient-check evaluation points
  std::uint64_t seed = 20240901;
  // Fault-injection hook: adds perturb_eps to one analytic gradient
  // coordinate inside the checker, to prove the checker catches it.
  int perturb_coordinate = -1;
  double perturb_eps = 0.0;
};
int cmd_check(const CheckOptions& options, std::ostream& out);

}  // namespace nos
