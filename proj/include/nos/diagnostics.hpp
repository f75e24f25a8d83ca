#pragma once

#include <string>
#include <vector>

#include "nos/sampler.hpp"

namespace nos {

struct ParamDiagnostic {
  double rhat = 0.0;
  double ess = 0.0;
  bool degenerate = false;  // zero pooled variance; rhat/ess undefined
};

/// Split R-hat and bulk effective sample size per parameter. R-hat is the
/// larger of the rank-normalized and plain split statistics (the rank
/// version saturates under large location shifts). Requires >= 2 chains
/// and >= 4 draws per chain.
std::vector<ParamDiagnostic> diagnostics(const PosteriorDraws& draws);

struct SummaryTable {
  std::vector<std::string> names;
  std::vector<double> means;
  std::vector<double> medians;
  std::vector<double> probs;              // requested quantile levels
  std::vector<std::vector<double>> quantiles;  // per row, aligned with probs
};

/// Per-parameter mean, median, and quantiles. For every eta[pop,year]
/// parameter an extra phi[pop,year] row summarizes the inverse-logit of
/// the draws (transformed before the quantiles are taken).
SummaryTable summarize(const PosteriorDraws& draws,
                       std::vector<double> probs = {0.025, 0.05, 0.5, 0.95, 0.975});

}  // namespace nos
