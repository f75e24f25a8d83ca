#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nos/datamodel.hpp"
#include "nos/domain.hpp"
#include "nos/rng.hpp"

namespace nos {

/// Latent-curve generator: straight lines in logit space with optional
/// random-walk curvature, per population.
struct SimCurveSpec {
  double intercept_mean = -1.0, intercept_sd = 0.5;
  double slope_mean = 0.04, slope_sd = 0.02;
  double rw2_sd = 0.0;  // sd of second-difference innovations
};

/// Deterministic additive logit-scale shift applied to one generated
/// observation, so tests control outlier magnitude exactly.
struct SimInjection {
  std::string population;
  int year = 0;
  SourceType source = SourceType::National;
  double shift = 0.0;
};

struct SimDesign {
  std::uint64_t seed = 1;
  int replicates = 1;
  int n_populations = 1;
  int n_years = 10;
  int year_start = 2005;
  Indicator indicator = Indicator::PrimaryProportion;
  std::string population_prefix = "P";

  std::map<SourceType, int> obs_per_source;                 // per population
  std::map<SourceType, std::vector<int>> years_by_source;   // optional override
  double n_eff_min = 500.0, n_eff_max = 3000.0;
  double char_fraction = 0.0;

  SimCurveSpec curve;
  std::optional<Eigen::MatrixXd> explicit_eta;  // populations x years

  DataModelParams truth;  // local_scale empty: no generated outlier errors
  std::vector<SimInjection> injections;
};

std::string validate_sim_design(const SimDesign& design);  // empty when valid

struct SimResult {
  std::vector<Observation> obs;
  LatentGrid truth;
};

/// Draws one dataset from the generative model: latent curves, then per
/// observation each active error type; PMA blocks are drawn jointly from
/// the AR-structured multivariate normal. Bit-reproducible given
/// (seed, replicate).
SimResult simulate_dataset(const SimDesign& design, int replicate = 0);

/// Textbook multivariate normal log density with an explicit hand-rolled
/// LU determinant and solve. Intentionally naive: the independent oracle
/// for the block-structured likelihood path.
double dense_normal_logpdf(const Eigen::VectorXd& z, const Eigen::VectorXd& mean,
                           const Eigen::MatrixXd& cov);

/// Central-difference gradient oracle.
Eigen::VectorXd finite_difference_gradient(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& v, double step);

/// Small random model instance with mixed independent and PMA-block
/// structure, used by likelihood-equivalence checks.
struct RandomInstance {
  Dataset data;
  Eigen::MatrixXd eta;
  DataModelParams params;
};
RandomInstance random_instance(Rng& rng, int max_obs = 30);

}  // namespace nos
