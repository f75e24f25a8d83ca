#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nos/domain.hpp"
#include "nos/preprocess.hpp"

namespace nos {

/// Index into the source-scale array for sources that carry a source-type
/// error (every source except DHS).
int source_scale_index(SourceType st);  // -1 for DHS
inline constexpr int kNumSourceScales = 4;
extern const std::array<SourceType, kNumSourceScales> kScaledSources;

/// Inferred data-model parameters. The derived per-observation outlier
/// scale is always computed on the fly, never stored.
struct DataModelParams {
  std::array<double, kNumSourceScales> source_scale{};  // MICS, PMA, National, Other
  double char_scale = 0.0;
  double tau = 0.1;    // global shrinkage scale
  double slab = 1.0;   // regularization (slab) scale
  std::vector<double> local_scale;  // gamma, one per outlier-set member
  double rho_pma = 0.5;

  double source(SourceType st) const { return source_scale[source_scale_index(st)]; }
};

/// Prior scales for the data-model parameters.
struct PriorConfig {
  double source_sd = 0.5;    // half-normal sd for each source scale
  double char_sd = 0.5;      // half-normal sd for the characteristic scale
  double tau_scale = 0.04;   // half-Cauchy scale for tau
  double slab_sd = 1.0;      // half-normal sd for the slab scale
};

/// Per-observation error-type membership, fixed logit-scale sampling
/// variances, and the PMA block partition.
struct ErrorStructure {
  std::vector<bool> in_source;      // carries a source-type error (non-DHS)
  std::vector<bool> in_char;        // population-characteristic mismatch
  std::vector<int> outlier_slot;    // index into local_scale, -1 if absent
  std::vector<double> logit_var;    // s_i^2 on the logit scale
  std::vector<std::int64_t> outlier_ids;      // observation ids per slot
  std::vector<std::vector<int>> pma_blocks;   // obs indices, year-sorted
  std::vector<int> independent;               // obs indices outside blocks

  int n_outliers() const { return static_cast<int>(outlier_ids.size()); }
};

/// Observations bound to a latent grid: transformed values, grid indices,
/// and the error structure, plus per-population groupings used by the
/// parallel evaluator.
struct Dataset {
  GridSpec grid;
  std::vector<Observation> obs;
  std::vector<double> z;
  std::vector<int> pop_of;   // population index per observation
  std::vector<int> tix_of;   // year index per observation
  ErrorStructure structure;

  std::vector<std::vector<int>> indep_by_pop;
  std::vector<std::vector<int>> blocks_by_pop;  // block ids

  int n_obs() const { return static_cast<int>(obs.size()); }
};

/// Assembles a Dataset for one indicator. Observations of other indicators
/// are dropped; classification flags must be aligned with `obs`.
/// Throws with a row-by-row report when validation fails.
Dataset build_dataset(std::span<const Observation> obs, Indicator indicator,
                      const OutlierClassification& classification,
                      std::optional<int> year_start = std::nullopt,
                      std::optional<int> year_end = std::nullopt);

/// Regularized-horseshoe outlier scale
///   sqrt(tau^2 theta^2 gamma^2 / (theta^2 + tau^2 gamma^2)),
/// monotone in gamma, exactly 0 at gamma = 0, bounded by the slab.
double horseshoe_scale(double tau, double slab, double gamma);

/// Total error sd for one observation: sampling variance plus every active
/// error-type variance, combined additively.
double total_error_sd(const Dataset& data, int i, const DataModelParams& params);

/// AR-in-time covariance for one PMA block:
/// Sigma_{j,l} = sigma_j sigma_l rho^{|t_j - t_l|}.
Eigen::MatrixXd build_covariance(const Dataset& data, std::span<const int> block,
                                 const DataModelParams& params);

/// Log density of the transformed observations given the latent grid:
/// univariate normals for independent observations plus multivariate
/// normals (via Cholesky) for PMA blocks.
double data_log_density(const Dataset& data, const Eigen::MatrixXd& eta,
                        const DataModelParams& params);

/// Log prior over the data-model parameters; -inf outside the support.
double datamodel_log_prior(const DataModelParams& params, const PriorConfig& priors,
                           int n_outliers);

}  // namespace nos
