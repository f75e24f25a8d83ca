#include "nos/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "nos/math.hpp"

namespace nos {

const char* to_string(FlagStep step) {
  switch (step) {
    case FlagStep::None: return "none";
    case FlagStep::Documented: return "step1";
    case FlagStep::NonReference: return "step2";
    case FlagStep::Trend: return "step3";
    case FlagStep::Override: return "override";
  }
  return "?";
}

TrendEstimate::TrendEstimate(std::vector<double> years, std::vector<double> z,
                             std::vector<double> weights, double bandwidth)
    : years_(std::move(years)), z_(std::move(z)), w_(std::move(weights)),
      bandwidth_(bandwidth) {
  if (years_.empty() || years_.size() != z_.size() || z_.size() != w_.size()) {
    throw std::invalid_argument("TrendEstimate: inconsistent inputs");
  }
  if (!(bandwidth_ > 0.0)) {
    throw std::invalid_argument("TrendEstimate: bandwidth must be positive");
  }
}

double TrendEstimate::evaluate(double year) const {
  const std::size_t n = years_.size();
  if (n == 1) return z_[0];

  // Kernel weights relative to the largest one, so distant evaluation
  // points cannot underflow the whole normal-equation system.
  std::vector<double> k(n);
  double kmax = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = (years_[i] - year) / bandwidth_;
    k[i] = -0.5 * u * u;
    if (i == 0 || k[i] > kmax) kmax = k[i];
  }
  double sw = 0.0, swx = 0.0, swxx = 0.0, swy = 0.0, swxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = w_[i] * std::exp(k[i] - kmax);
    const double x = years_[i] - year;
    sw += w;
    swx += w * x;
    swxx += w * x * x;
    swy += w * z_[i];
    swxy += w * x * z_[i];
  }
  // Local linear fit z ~ a + b*(t - year); the intercept is the estimate.
  const double det = sw * swxx - swx * swx;
  const double scale = sw * swxx;
  if (!(det > 1e-12 * std::max(scale, 1e-300))) {
    return swy / sw;  // all mass at one year: weighted mean
  }
  return (swxx * swy - swx * swxy) / det;
}

std::vector<bool> flag_documented_concerns(std::span<const Observation> obs,
                                           const PreprocessConfig& config) {
  std::vector<bool> flags(obs.size(), false);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    bool f = obs[i].documented_concern;
    if (config.flag_dhs_before_1990 && obs[i].source_type == SourceType::DHS &&
        obs[i].year < 1990) {
      f = true;
    }
    flags[i] = f;
  }
  return flags;
}

std::optional<SourceType> select_reference_source(
    std::span<const Observation> obs, const std::vector<bool>& step1) {
  if (obs.size() != step1.size()) {
    throw std::invalid_argument("select_reference_source: flag size mismatch");
  }
  int n_national = 0, n_other = 0;
  bool any_dhs = false;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (step1[i]) continue;
    switch (obs[i].source_type) {
      case SourceType::DHS:
        any_dhs = true;
        break;
      case SourceType::National:
        if (obs[i].year >= 1990) ++n_national;
        break;
      case SourceType::Other:
        if (obs[i].year >= 1990) ++n_other;
        break;
      default:
        break;
    }
  }
  if (any_dhs) return SourceType::DHS;
  if (n_national == 0 && n_other == 0) return std::nullopt;
  return n_other > n_national ? SourceType::Other : SourceType::National;
}

TrendEstimate fit_longterm_trend(std::span<const Observation> obs,
                                 double smoothing_strength) {
  if (obs.empty()) {
    throw std::invalid_argument("fit_longterm_trend: no reference observations");
  }
  std::vector<double> years, z, w;
  years.reserve(obs.size());
  z.reserve(obs.size());
  w.reserve(obs.size());
  for (const auto& o : obs) {
    const auto t = transform_observation(o);
    years.push_back(static_cast<double>(o.year));
    z.push_back(t.z);
    w.push_back(1.0 / (t.logit_sampling_variance + 0.01));
  }
  return TrendEstimate(std::move(years), std::move(z), std::move(w),
                       smoothing_strength);
}

std::vector<bool> flag_trend_outliers(std::span<const double> z,
                                      std::span<const double> trend,
                                      double top_fraction) {
  if (z.size() != trend.size()) {
    throw std::invalid_argument("flag_trend_outliers: size mismatch");
  }
  std::vector<bool> flags(z.size(), false);
  if (z.empty()) return flags;
  std::vector<double> resid(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) resid[i] = std::abs(z[i] - trend[i]);
  const double cut = quantile_unsorted(resid, 1.0 - top_fraction);
  for (std::size_t i = 0; i < z.size(); ++i) flags[i] = resid[i] > cut;
  return flags;
}

OutlierClassification classify_possible_outliers(
    std::span<const Observation> obs, const PreprocessConfig& config) {
  OutlierClassification out;
  out.possibly_outlying.assign(obs.size(), false);
  out.flag_step.assign(obs.size(), FlagStep::None);

  const std::vector<bool> step1 = flag_documented_concerns(obs, config);

  // Group indices per population, preserving input order within groups.
  std::map<std::string, std::vector<std::size_t>> by_pop;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    by_pop[obs[i].population].push_back(i);
  }

  for (auto& [pop, idx] : by_pop) {
    std::vector<Observation> group;
    std::vector<bool> group_step1;
    group.reserve(idx.size());
    for (std::size_t i : idx) {
      group.push_back(obs[i]);
      group_step1.push_back(step1[i]);
    }
    const auto ref = select_reference_source(group, group_step1);
    out.reference_source[pop] = ref;

    if (!ref) {
      for (std::size_t j = 0; j < idx.size(); ++j) {
        out.possibly_outlying[idx[j]] = true;
        out.flag_step[idx[j]] =
            group_step1[j] ? FlagStep::Documented : FlagStep::NonReference;
      }
      continue;
    }

    // Reference members: unflagged observations of the reference source.
    std::vector<std::size_t> ref_local;
    std::vector<Observation> ref_obs;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      if (!group_step1[j] && group[j].source_type == *ref) {
        ref_local.push_back(j);
        ref_obs.push_back(group[j]);
      }
    }
    const TrendEstimate trend = fit_longterm_trend(ref_obs, config.bandwidth);
    std::vector<double> z(ref_obs.size()), fitted(ref_obs.size());
    for (std::size_t j = 0; j < ref_obs.size(); ++j) {
      z[j] = transform_observation(ref_obs[j]).z;
      fitted[j] = trend.evaluate(static_cast<double>(ref_obs[j].year));
    }
    const std::vector<bool> step3 = flag_trend_outliers(z, fitted, config.top_fraction);

    std::vector<bool> is_ref(idx.size(), false);
    std::vector<bool> ref_flag(idx.size(), false);
    for (std::size_t j = 0; j < ref_local.size(); ++j) {
      is_ref[ref_local[j]] = true;
      ref_flag[ref_local[j]] = step3[j];
    }
    for (std::size_t j = 0; j < idx.size(); ++j) {
      FlagStep step = FlagStep::None;
      if (group_step1[j]) {
        step = FlagStep::Documented;
      } else if (!is_ref[j]) {
        step = FlagStep::NonReference;
      } else if (ref_flag[j]) {
        step = FlagStep::Trend;
      }
      out.possibly_outlying[idx[j]] = step != FlagStep::None;
      out.flag_step[idx[j]] = step;
    }
  }

  // User overrides win over everything above.
  if (!config.non_outlying_overrides.empty()) {
    std::unordered_set<std::int64_t> force(config.non_outlying_overrides.begin(),
                                           config.non_outlying_overrides.end());
    for (std::size_t i = 0; i < obs.size(); ++i) {
      if (force.count(obs[i].id) && out.possibly_outlying[i]) {
        out.possibly_outlying[i] = false;
        out.flag_step[i] = FlagStep::Override;
      }
    }
  }
  return out;
}

}  // namespace nos
