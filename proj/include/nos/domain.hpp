#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace nos {

enum class Indicator { PrimaryProportion, UnmetRatio };
enum class SourceType { DHS, MICS, PMA, National, Other };

const char* to_string(Indicator ind);
const char* to_string(SourceType st);
Indicator indicator_from_string(const std::string& s);
SourceType source_type_from_string(const std::string& s);

/// One survey measurement of a proportion indicator.
struct Observation {
  std::int64_t id = 0;
  std::string population;
  int year = 0;
  Indicator indicator = Indicator::PrimaryProportion;
  double value = 0.0;  // proportion, strictly inside (0,1)
  std::optional<double> sampling_variance;        // proportion scale
  std::optional<double> effective_sample_size;
  SourceType source_type = SourceType::Other;
  bool char_mismatch = false;      // sampled population differs from target
  bool documented_concern = false;
  std::optional<std::string> pma_series_id;  // present iff source_type == PMA
};

/// Checks the Observation invariants; returns a description of the first
/// violation, or an empty string when valid.
std::string validate_observation(const Observation& obs);

struct TransformedObservation {
  double z = 0.0;                      // logit of the observed proportion
  double logit_sampling_variance = 0.0;
};

/// Populations x contiguous annual year range.
struct GridSpec {
  std::vector<std::string> populations;  // ordered, unique
  int year_start = 0;
  int n_years = 0;

  int n_populations() const { return static_cast<int>(populations.size()); }
  int year_index(int year) const { return year - year_start; }
  bool covers(int year) const {
    return year >= year_start && year < year_start + n_years;
  }
  int population_index(const std::string& pop) const;  // -1 if absent
};

/// Latent indicator values on the transformed (logit) scale,
/// one row per population, one column per year.
struct LatentGrid {
  GridSpec spec;
  Eigen::MatrixXd eta;

  LatentGrid() = default;
  explicit LatentGrid(GridSpec s)
      : spec(std::move(s)),
        eta(Eigen::MatrixXd::Zero(spec.n_populations(), spec.n_years)) {}
};

double logit(double p);       // throws std::domain_error outside (0,1)
double inv_logit(double x);   // numerically stable for large |x|

/// Delta-method transfer of a proportion-scale variance to the logit scale:
/// var_p / (p(1-p))^2.
double delta_logit_variance(double p, double var_p);

/// Binomial-style variance imputation p(1-p)/n_eff on the proportion scale.
double impute_sampling_variance(double p, double n_eff);

/// Ratio transform y2 / (1 - y1); requires y2 < 1 - y1.
double unmet_ratio(double y1, double y2);

/// Logit transform plus sampling-variance derivation. The stored
/// proportion-scale variance wins over effective-sample-size imputation
/// when both are present.
TransformedObservation transform_observation(const Observation& obs);

}  // namespace nos
