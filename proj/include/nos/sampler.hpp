#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "nos/rng.hpp"

namespace nos {

/// Differentiable unnormalized log density over an unconstrained space.
class LogDensityTarget {
 public:
  virtual ~LogDensityTarget() = default;
  virtual int dim() const = 0;
  /// Fills grad (resized by the caller) and returns the log density.
  virtual double log_density_grad(const Eigen::VectorXd& pos,
                                  Eigen::VectorXd& grad) const = 0;

  /// Names of the stored (constrained) parameters.
  virtual std::vector<std::string> constrained_names() const;
  /// Maps an unconstrained position to the stored parameter vector.
  virtual Eigen::VectorXd constrain_draw(const Eigen::VectorXd& pos) const;
  /// Chain starting point; the default is uniform on (-2, 2) per coordinate.
  virtual Eigen::VectorXd init_point(Rng& rng) const;
};

struct SamplerConfig {
  int chains = 4;
  int warmup = 500;
  int draws = 1000;
  std::uint64_t seed = 1;
  double target_accept = 0.9;
  int max_depth = 10;
  bool parallel_chains = true;
};

/// Post-warmup draws on the constrained scale plus sampler statistics.
struct PosteriorDraws {
  std::vector<std::string> names;
  std::vector<Eigen::MatrixXd> chains;   // draws x params, one per chain
  std::vector<Eigen::VectorXd> lp;
  std::vector<std::vector<int>> tree_depth;
  std::vector<std::vector<std::uint8_t>> divergent;
  std::vector<double> step_size;         // adapted, per chain
  std::uint64_t seed = 0;
  int warmup = 0;

  int n_chains() const { return static_cast<int>(chains.size()); }
  int n_draws() const { return chains.empty() ? 0 : static_cast<int>(chains[0].rows()); }
  int n_params() const { return static_cast<int>(names.size()); }
  int param_index(const std::string& name) const;  // -1 when absent
  /// All chains' draws of one parameter, concatenated in chain order.
  std::vector<double> flat(int param) const;
  double divergence_rate() const;
};

/// Dynamic-trajectory HMC (multinomial no-U-turn sampling) with dual-
/// averaging step-size adaptation and windowed diagonal-metric estimation.
/// Chains use independent RNG substreams of the seed and are merged in
/// chain order, so results do not depend on thread count.
PosteriorDraws sample(const LogDensityTarget& target, const SamplerConfig& config);

}  // namespace nos
