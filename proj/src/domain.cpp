#include "nos/domain.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace nos {

const char* to_string(Indicator ind) {
  switch (ind) {
    case Indicator::PrimaryProportion: return "primary_proportion";
    case Indicator::UnmetRatio: return "unmet_ratio";
  }
  return "?";
}

const char* to_string(SourceType st) {
  switch (st) {
    case SourceType::DHS: return "DHS";
    case SourceType::MICS: return "MICS";
    case SourceType::PMA: return "PMA";
    case SourceType::National: return "National";
    case SourceType::Other: return "Other";
  }
  return "?";
}

Indicator indicator_from_string(const std::string& s) {
  if (s == "primary_proportion") return Indicator::PrimaryProportion;
  if (s == "unmet_ratio") return Indicator::UnmetRatio;
  throw std::invalid_argument("unknown indicator: " + s);
}

SourceType source_type_from_string(const std::string& s) {
  if (s == "DHS") return SourceType::DHS;
  if (s == "MICS") return SourceType::MICS;
  if (s == "PMA") return SourceType::PMA;
  if (s == "National") return SourceType::National;
  if (s == "Other") return SourceType::Other;
  throw std::invalid_argument("unknown source_type: " + s);
}

std::string validate_observation(const Observation& obs) {
  std::ostringstream msg;
  if (!(obs.value > 0.0 && obs.value < 1.0)) {
    msg << "value " << obs.value << " outside (0,1)";
    return msg.str();
  }
  if (!obs.sampling_variance && !obs.effective_sample_size) {
    return "needs sampling variance or effective sample size";
  }
  if (obs.sampling_variance && *obs.sampling_variance < 0.0) {
    return "negative sampling variance";
  }
  if (obs.effective_sample_size && !(*obs.effective_sample_size > 0.0)) {
    return "effective sample size must be positive";
  }
  const bool is_pma = obs.source_type == SourceType::PMA;
  if (is_pma != obs.pma_series_id.has_value()) {
    return is_pma ? "PMA observation without pma_series_id"
                  : "pma_series_id on a non-PMA observation";
  }
  if (obs.population.empty()) return "empty population id";
  if (obs.population.find_first_of(",:\n") != std::string::npos) {
    return "population id must not contain ',' ':' or newlines";
  }
  if (obs.pma_series_id &&
      obs.pma_series_id->find_first_of(",:\n") != std::string::npos) {
    return "pma_series_id must not contain ',' ':' or newlines";
  }
  return {};
}

int GridSpec::population_index(const std::string& pop) const {
  for (int c = 0; c < n_populations(); ++c) {
    if (populations[c] == pop) return c;
  }
  return -1;
}

double logit(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error("logit: argument must lie strictly inside (0,1)");
  }
  return std::log(p / (1.0 - p));
}

double inv_logit(double x) {
  double p;
  if (x >= 0.0) {
    p = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    p = e / (1.0 + e);
  }
  // Keep the open interval even where rounding reaches an endpoint.
  if (p >= 1.0) return 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
  if (p <= 0.0) return std::numeric_limits<double>::min();
  return p;
}

double delta_logit_variance(double p, double var_p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error("delta_logit_variance: p must lie inside (0,1)");
  }
  if (var_p < 0.0) {
    throw std::domain_error("delta_logit_variance: negative variance");
  }
  const double den = p * (1.0 - p);
  return var_p / (den * den);
}

double impute_sampling_variance(double p, double n_eff) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error("impute_sampling_variance: p must lie inside (0,1)");
  }
  if (!(n_eff > 0.0)) {
    throw std::domain_error("impute_sampling_variance: n_eff must be positive");
  }
  return p * (1.0 - p) / n_eff;
}

double unmet_ratio(double y1, double y2) {
  if (!(y1 > 0.0 && y1 < 1.0) || !(y2 > 0.0 && y2 < 1.0)) {
    throw std::domain_error("unmet_ratio: proportions must lie inside (0,1)");
  }
  if (y2 >= 1.0 - y1) {
    throw std::domain_error("unmet_ratio: categories must sum below 1");
  }
  return y2 / (1.0 - y1);
}

TransformedObservation transform_observation(const Observation& obs) {
  TransformedObservation out;
  out.z = logit(obs.value);
  const double var_p = obs.sampling_variance
                           ? *obs.sampling_variance
                           : impute_sampling_variance(obs.value,
                                                      *obs.effective_sample_size);
  out.logit_sampling_variance = delta_logit_variance(obs.value, var_p);
  return out;
}

}  // namespace nos
