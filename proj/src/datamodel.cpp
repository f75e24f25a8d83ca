#include "nos/datamodel.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "nos/math.hpp"

namespace nos {

const std::array<SourceType, kNumSourceScales> kScaledSources = {
    SourceType::MICS, SourceType::PMA, SourceType::National, SourceType::Other};

int source_scale_index(SourceType st) {
  switch (st) {
    case SourceType::MICS: return 0;
    case SourceType::PMA: return 1;
    case SourceType::National: return 2;
    case SourceType::Other: return 3;
    case SourceType::DHS: return -1;
  }
  return -1;
}

Dataset build_dataset(std::span<const Observation> all_obs, Indicator indicator,
                      const OutlierClassification& classification,
                      std::optional<int> year_start, std::optional<int> year_end) {
  if (classification.possibly_outlying.size() != all_obs.size()) {
    throw std::invalid_argument("build_dataset: classification not aligned with observations");
  }
  Dataset ds;
  std::vector<bool> outlying;
  std::vector<std::string> problems;
  std::set<std::string> pops;
  std::set<std::int64_t> seen_ids;
  int ymin = std::numeric_limits<int>::max();
  int ymax = std::numeric_limits<int>::min();

  for (std::size_t i = 0; i < all_obs.size(); ++i) {
    const Observation& o = all_obs[i];
    if (o.indicator != indicator) continue;
    const std::string err = validate_observation(o);
    if (!err.empty()) {
      std::ostringstream m;
      m << "observation id " << o.id << ": " << err;
      problems.push_back(m.str());
      continue;
    }
    if (!seen_ids.insert(o.id).second) {
      std::ostringstream m;
      m << "observation id " << o.id << ": duplicate id";
      problems.push_back(m.str());
      continue;
    }
    ds.obs.push_back(o);
    outlying.push_back(classification.possibly_outlying[i]);
    pops.insert(o.population);
    ymin = std::min(ymin, o.year);
    ymax = std::max(ymax, o.year);
  }
  if (!problems.empty()) {
    std::ostringstream m;
    m << "invalid observations:";
    for (const auto& p : problems) m << "\n  " << p;
    throw std::runtime_error(m.str());
  }
  if (ds.obs.empty()) {
    throw std::runtime_error("build_dataset: no observations for the selected indicator");
  }

  ds.grid.populations.assign(pops.begin(), pops.end());
  ds.grid.year_start = year_start.value_or(ymin);
  const int last = year_end.value_or(ymax);
  ds.grid.n_years = last - ds.grid.year_start + 1;
  if (ds.grid.n_years < 1) {
    throw std::runtime_error("build_dataset: empty year range");
  }

  const int n = ds.n_obs();
  ds.z.resize(n);
  ds.pop_of.resize(n);
  ds.tix_of.resize(n);
  auto& st = ds.structure;
  st.in_source.resize(n);
  st.in_char.resize(n);
  st.outlier_slot.assign(n, -1);
  st.logit_var.resize(n);

  std::map<std::int64_t, int> obs_by_id;
  for (int i = 0; i < n; ++i) {
    const Observation& o = ds.obs[i];
    if (!ds.grid.covers(o.year)) {
      std::ostringstream m;
      m << "observation id " << o.id << ": year " << o.year
        << " outside grid range [" << ds.grid.year_start << ", "
        << ds.grid.year_start + ds.grid.n_years - 1 << "]";
      problems.push_back(m.str());
      continue;
    }
    const auto t = transform_observation(o);
    ds.z[i] = t.z;
    st.logit_var[i] = t.logit_sampling_variance;
    ds.pop_of[i] = ds.grid.population_index(o.population);
    ds.tix_of[i] = ds.grid.year_index(o.year);
    st.in_source[i] = o.source_type != SourceType::DHS;
    st.in_char[i] = o.char_mismatch;
    if (outlying[i]) obs_by_id.emplace(o.id, i);
  }
  if (!problems.empty()) {
    std::ostringstream m;
    m << "invalid observations:";
    for (const auto& p : problems) m << "\n  " << p;
    throw std::runtime_error(m.str());
  }

  // Outlier slots ordered by observation id, so the parameter layout is
  // independent of file row order.
  for (const auto& [id, i] : obs_by_id) {
    st.outlier_slot[i] = static_cast<int>(st.outlier_ids.size());
    st.outlier_ids.push_back(id);
  }

  // PMA blocks keyed by (population, series); duplicate years rejected.
  std::map<std::pair<std::string, std::string>, std::vector<int>> blocks;
  for (int i = 0; i < n; ++i) {
    if (ds.obs[i].source_type == SourceType::PMA) {
      blocks[{ds.obs[i].population, *ds.obs[i].pma_series_id}].push_back(i);
    } else {
      st.independent.push_back(i);
    }
  }
  for (auto& [key, members] : blocks) {
    std::sort(members.begin(), members.end(),
              [&](int a, int b) { return ds.obs[a].year < ds.obs[b].year; });
    for (std::size_t j = 1; j < members.size(); ++j) {
      if (ds.obs[members[j]].year == ds.obs[members[j - 1]].year) {
        std::ostringstream m;
        m << "duplicate PMA year " << ds.obs[members[j]].year << " in population "
          << key.first << " series " << key.second;
        throw std::runtime_error(m.str());
      }
    }
    st.pma_blocks.push_back(members);
  }

  ds.indep_by_pop.assign(ds.grid.n_populations(), {});
  ds.blocks_by_pop.assign(ds.grid.n_populations(), {});
  for (int i : st.independent) ds.indep_by_pop[ds.pop_of[i]].push_back(i);
  for (std::size_t b = 0; b < st.pma_blocks.size(); ++b) {
    ds.blocks_by_pop[ds.pop_of[st.pma_blocks[b].front()]].push_back(static_cast<int>(b));
  }
  return ds;
}

double horseshoe_scale(double tau, double slab, double gamma) {
  if (!(tau > 0.0) || !(slab > 0.0) || gamma < 0.0) {
    throw std::domain_error("horseshoe_scale: tau, slab must be positive, gamma >= 0");
  }
  if (gamma == 0.0) return 0.0;
  const double r = tau * gamma / slab;
  if (r <= 1.0) {
    return tau * gamma / std::sqrt(1.0 + r * r);
  }
  const double s = slab / std::sqrt(1.0 + 1.0 / (r * r));
  // Strictly below the slab even once rounding saturates.
  return s >= slab ? std::nextafter(slab, 0.0) : s;
}

double total_error_sd(const Dataset& data, int i, const DataModelParams& params) {
  const auto& st = data.structure;
  double v = st.logit_var[i];
  if (st.in_source[i]) {
    const double s = params.source(data.obs[i].source_type);
    v += s * s;
  }
  if (st.in_char[i]) v += params.char_scale * params.char_scale;
  if (st.outlier_slot[i] >= 0) {
    const int k = st.outlier_slot[i];
    if (k >= static_cast<int>(params.local_scale.size())) {
      throw std::invalid_argument("total_error_sd: missing local scale for outlier member");
    }
    const double hs = horseshoe_scale(params.tau, params.slab, params.local_scale[k]);
    v += hs * hs;
  }
  return std::sqrt(v);
}

Eigen::MatrixXd build_covariance(const Dataset& data, std::span<const int> block,
                                 const DataModelParams& params) {
  const int k = static_cast<int>(block.size());
  if (k == 0) throw std::invalid_argument("build_covariance: empty block");
  Eigen::VectorXd sd(k);
  for (int j = 0; j < k; ++j) sd[j] = total_error_sd(data, block[j], params);
  Eigen::MatrixXd cov(k, k);
  for (int j = 0; j < k; ++j) {
    cov(j, j) = sd[j] * sd[j];
    for (int l = j + 1; l < k; ++l) {
      const int gap = std::abs(data.obs[block[j]].year - data.obs[block[l]].year);
      const double c = sd[j] * sd[l] * std::pow(params.rho_pma, gap);
      cov(j, l) = c;
      cov(l, j) = c;
    }
  }
  return cov;
}

double data_log_density(const Dataset& data, const Eigen::MatrixXd& eta,
                        const DataModelParams& params) {
  const auto& st = data.structure;
  double lp = 0.0;
  for (int i : st.independent) {
    const double sd = total_error_sd(data, i, params);
    lp += normal_logpdf(data.z[i], eta(data.pop_of[i], data.tix_of[i]), sd);
  }
  for (std::size_t b = 0; b < st.pma_blocks.size(); ++b) {
    const auto& block = st.pma_blocks[b];
    const int k = static_cast<int>(block.size());
    const Eigen::MatrixXd cov = build_covariance(data, block, params);
    Eigen::VectorXd resid(k);
    for (int j = 0; j < k; ++j) {
      resid[j] = data.z[block[j]] - eta(data.pop_of[block[j]], data.tix_of[block[j]]);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) {
      const Observation& o = data.obs[block.front()];
      std::ostringstream m;
      m << "non-positive-definite PMA block covariance: population " << o.population
        << " series " << (o.pma_series_id ? *o.pma_series_id : "?");
      throw std::runtime_error(m.str());
    }
    const Eigen::MatrixXd L = llt.matrixL();
    double logdet = 0.0;
    for (int j = 0; j < k; ++j) logdet += std::log(L(j, j));
    const Eigen::VectorXd alpha = llt.solve(resid);
    lp += -0.5 * k * kLog2Pi - logdet - 0.5 * resid.dot(alpha);
  }
  return lp;
}

double datamodel_log_prior(const DataModelParams& params, const PriorConfig& priors,
                           int n_outliers) {
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();
  if (static_cast<int>(params.local_scale.size()) != n_outliers) {
    throw std::invalid_argument("datamodel_log_prior: local scale count mismatch");
  }
  if (!(params.rho_pma > 0.0 && params.rho_pma < 1.0)) return neg_inf;
  double lp = 0.0;
  for (double s : params.source_scale) lp += half_normal_logpdf(s, priors.source_sd);
  lp += half_normal_logpdf(params.char_scale, priors.char_sd);
  lp += half_cauchy_logpdf(params.tau, priors.tau_scale);
  lp += half_normal_logpdf(params.slab, priors.slab_sd);
  for (double g : params.local_scale) lp += half_cauchy_logpdf(g, 1.0);
  // rho_pma ~ U(0,1) contributes 0 inside the support.
  return lp;
}

}  // namespace nos
