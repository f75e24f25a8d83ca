#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nos/domain.hpp"

namespace nos {

struct PreprocessConfig {
  double top_fraction = 0.10;       // trend-residual flagging share
  double bandwidth = 5.0;           // trend smoother bandwidth, years
  bool flag_dhs_before_1990 = true;
  std::vector<std::int64_t> non_outlying_overrides;  // forced out of the outlier set
};

enum class FlagStep {
  None,         // not possibly outlying
  Documented,   // step 1: documented concern or rule hit
  NonReference, // step 2: outside the population's reference category
  Trend,        // step 3: extreme residual against the long-term trend
  Override,     // flag cleared by an explicit user override
};

const char* to_string(FlagStep step);

/// Per-observation outlier verdicts plus the reference source chosen for
/// each population. Vectors are aligned with the classified observation span.
struct OutlierClassification {
  std::vector<bool> possibly_outlying;
  std::vector<FlagStep> flag_step;
  std::map<std::string, std::optional<SourceType>> reference_source;
};

/// Deterministic local-linear smoother on (year, z) with a Gaussian kernel
/// and precision-style weights. A single fitted point yields a constant
/// curve; degenerate year spreads fall back to the weighted mean.
class TrendEstimate {
 public:
  TrendEstimate(std::vector<double> years, std::vector<double> z,
                std::vector<double> weights, double bandwidth);

  double evaluate(double year) const;

 private:
  std::vector<double> years_, z_, w_;
  double bandwidth_;
};

/// Step 1: documented data-quality concerns. The default rule set flags
/// DHS observations collected before 1990 on top of explicit
/// documented_concern marks.
std::vector<bool> flag_documented_concerns(std::span<const Observation> obs,
                                           const PreprocessConfig& config);

/// Step 2: reference source for one population's observations, given the
/// step-1 flags. DHS wins when any unflagged DHS observation exists;
/// otherwise National vs Other by the larger count of year >= 1990
/// observations (National on ties); absent when neither qualifies.
std::optional<SourceType> select_reference_source(
    std::span<const Observation> obs, const std::vector<bool>& step1);

/// Fits the long-term trend through reference-category observations.
/// Weights are 1/(logit sampling variance + 0.01).
TrendEstimate fit_longterm_trend(std::span<const Observation> obs,
                                 double smoothing_strength);

/// Step 3: flags observations whose absolute residual |z - trend| strictly
/// exceeds the empirical (1 - top_fraction) quantile of the pool.
std::vector<bool> flag_trend_outliers(std::span<const double> z,
                                      std::span<const double> trend,
                                      double top_fraction = 0.10);

/// Full three-step classification, applied per population, with
/// user overrides applied last.
OutlierClassification classify_possible_outliers(
    std::span<const Observation> obs, const PreprocessConfig& config);

}  // namespace nos
