#include "nos/sim.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include "nos/math.hpp"
#include "nos/preprocess.hpp"

namespace nos {

namespace {

std::string pop_name(const SimDesign& d, int c) {
  std::ostringstream s;
  int width = 1, n = d.n_populations;
  while (n >= 10) {
    ++width;
    n /= 10;
  }
  s << d.population_prefix;
  std::string num = std::to_string(c + 1);
  while (static_cast<int>(num.size()) < width) num = "0" + num;
  s << num;
  return s.str();
}

/// Evenly spaced years for k observations over the grid range.
std::vector<int> default_years(const SimDesign& d, SourceType source, int k) {
  std::vector<int> years;
  if (source == SourceType::PMA) {
    // Consecutive panel rounds ending at the last year.
    const int last = d.year_start + d.n_years - 1;
    for (int j = 0; j < k; ++j) years.push_back(last - k + 1 + j);
  } else {
    for (int j = 0; j < k; ++j) {
      const int y = d.year_start +
                    static_cast<int>((j + 0.5) * d.n_years / static_cast<double>(k));
      years.push_back(std::min(y, d.year_start + d.n_years - 1));
    }
  }
  return years;
}

}  // namespace

std::string validate_sim_design(const SimDesign& d) {
  if (d.n_populations < 1) return "n_populations must be positive";
  if (d.n_years < 1) return "n_years must be positive";
  if (d.replicates < 1) return "replicates must be positive";
  if (!(d.n_eff_min > 0.0) || d.n_eff_max < d.n_eff_min) return "invalid n_eff range";
  if (d.char_fraction < 0.0 || d.char_fraction > 1.0) return "char_fraction outside [0,1]";
  if (!(d.truth.rho_pma > 0.0 && d.truth.rho_pma < 1.0)) return "rho_pma outside (0,1)";
  for (double s : d.truth.source_scale) {
    if (s < 0.0) return "negative source scale";
  }
  if (d.truth.char_scale < 0.0) return "negative char scale";
  if (d.explicit_eta &&
      (d.explicit_eta->rows() != d.n_populations || d.explicit_eta->cols() != d.n_years)) {
    return "explicit_eta dimensions do not match populations x years";
  }
  for (const auto& [source, years] : d.years_by_source) {
    for (int y : years) {
      if (y < d.year_start || y >= d.year_start + d.n_years) {
        return "years_by_source entry outside the grid range";
      }
    }
    if (source == SourceType::PMA) {
      std::set<int> uniq(years.begin(), years.end());
      if (uniq.size() != years.size()) return "duplicate PMA years in design";
    }
  }
  for (const auto& inj : d.injections) {
    if (!std::isfinite(inj.shift)) return "non-finite injection shift";
  }
  return {};
}

SimResult simulate_dataset(const SimDesign& design, int replicate) {
  const std::string err = validate_sim_design(design);
  if (!err.empty()) throw std::invalid_argument("simulate_dataset: " + err);

  Rng rng = Rng::substream(design.seed, static_cast<std::uint64_t>(replicate));
  const int C = design.n_populations;
  const int T = design.n_years;

  SimResult result;
  GridSpec grid;
  for (int c = 0; c < C; ++c) grid.populations.push_back(pop_name(design, c));
  grid.year_start = design.year_start;
  grid.n_years = T;
  result.truth = LatentGrid(grid);

  // True latent curves.
  if (design.explicit_eta) {
    result.truth.eta = *design.explicit_eta;
  } else {
    for (int c = 0; c < C; ++c) {
      const double a = rng.normal(design.curve.intercept_mean, design.curve.intercept_sd);
      const double b = rng.normal(design.curve.slope_mean, design.curve.slope_sd);
      result.truth.eta(c, 0) = a;
      if (T > 1) result.truth.eta(c, 1) = a + b;
      for (int t = 2; t < T; ++t) {
        double innov = 0.0;
        if (design.curve.rw2_sd > 0.0) innov = rng.normal(0.0, design.curve.rw2_sd);
        result.truth.eta(c, t) =
            2.0 * result.truth.eta(c, t - 1) - result.truth.eta(c, t - 2) + innov;
      }
    }
  }

  const std::array<SourceType, 5> source_order = {SourceType::DHS, SourceType::MICS,
                                                  SourceType::PMA, SourceType::National,
                                                  SourceType::Other};
  std::int64_t next_id = 1;
  for (int c = 0; c < C; ++c) {
    std::vector<int> pma_members;  // indices into result.obs
    for (SourceType source : source_order) {
      std::vector<int> years;
      if (auto it = design.years_by_source.find(source); it != design.years_by_source.end()) {
        years = it->second;
      } else if (auto jt = design.obs_per_source.find(source); jt != design.obs_per_source.end()) {
        years = default_years(design, source, jt->second);
      }
      for (int year : years) {
        Observation o;
        o.id = next_id++;
        o.population = grid.populations[c];
        o.year = year;
        o.indicator = design.indicator;
        o.source_type = source;
        if (source == SourceType::PMA) o.pma_series_id = "s1";

        const double eta_true = result.truth.eta(c, grid.year_index(year));
        const double phi = inv_logit(eta_true);
        const double n_eff =
            static_cast<double>(rng.uniform_int(static_cast<std::int64_t>(design.n_eff_min),
                                                static_cast<std::int64_t>(design.n_eff_max)));
        const double var_p = phi * (1.0 - phi) / n_eff;
        o.sampling_variance = var_p;
        o.effective_sample_size = n_eff;
        o.char_mismatch = design.char_fraction > 0.0 && rng.uniform() < design.char_fraction;

        const double s2_logit = delta_logit_variance(phi, var_p);
        double total_err = 0.0;
        if (source == SourceType::PMA) {
          // Block errors drawn jointly below; store the placeholder.
          o.value = phi;
          result.obs.push_back(o);
          pma_members.push_back(static_cast<int>(result.obs.size()) - 1);
          continue;
        }
        total_err += rng.normal(0.0, std::sqrt(s2_logit));
        if (source != SourceType::DHS) {
          total_err += rng.normal(0.0, design.truth.source(source));
        }
        if (o.char_mismatch) total_err += rng.normal(0.0, design.truth.char_scale);
        o.value = inv_logit(eta_true + total_err);
        result.obs.push_back(o);
      }
    }

    // Joint AR-correlated draw of the PMA block's total errors.
    if (!pma_members.empty()) {
      const int k = static_cast<int>(pma_members.size());
      Eigen::VectorXd sd(k);
      for (int j = 0; j < k; ++j) {
        const Observation& o = result.obs[pma_members[j]];
        const double phi = o.value;  // placeholder: true proportion
        double v = delta_logit_variance(phi, *o.sampling_variance);
        const double src = design.truth.source(SourceType::PMA);
        v += src * src;
        if (o.char_mismatch) v += design.truth.char_scale * design.truth.char_scale;
        sd[j] = std::sqrt(v);
      }
      Eigen::MatrixXd cov(k, k);
      for (int j = 0; j < k; ++j) {
        cov(j, j) = sd[j] * sd[j];
        for (int l = j + 1; l < k; ++l) {
          const int gap = std::abs(result.obs[pma_members[j]].year -
                                   result.obs[pma_members[l]].year);
          cov(j, l) = sd[j] * sd[l] * std::pow(design.truth.rho_pma, gap);
          cov(l, j) = cov(j, l);
        }
      }
      const Eigen::MatrixXd L = Eigen::LLT<Eigen::MatrixXd>(cov).matrixL();
      Eigen::VectorXd xi(k);
      for (int j = 0; j < k; ++j) xi[j] = rng.normal();
      const Eigen::VectorXd errors = L * xi;
      for (int j = 0; j < k; ++j) {
        Observation& o = result.obs[pma_members[j]];
        const double eta_true = result.truth.eta(c, grid.year_index(o.year));
        o.value = inv_logit(eta_true + errors[j]);
      }
    }
  }

  // Deterministic outlier injections, applied after error generation.
  for (const auto& inj : design.injections) {
    bool found = false;
    for (auto& o : result.obs) {
      if (o.population == inj.population && o.year == inj.year &&
          o.source_type == inj.source) {
        o.value = inv_logit(logit(o.value) + inj.shift);
        found = true;
        break;
      }
    }
    if (!found) {
      std::ostringstream m;
      m << "injection target not generated: population " << inj.population
        << " year " << inj.year << " source " << to_string(inj.source);
      throw std::invalid_argument(m.str());
    }
  }
  return result;
}

double dense_normal_logpdf(const Eigen::VectorXd& z, const Eigen::VectorXd& mean,
                           const Eigen::MatrixXd& cov) {
  const int n = static_cast<int>(z.size());
  if (mean.size() != n || cov.rows() != n || cov.cols() != n) {
    throw std::invalid_argument("dense_normal_logpdf: dimension mismatch");
  }
  // Plain LU with partial pivoting on a copy.
  std::vector<double> a(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) a[i * n + j] = cov(i, j);
  }
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  double det_sign = 1.0;
  for (int k = 0; k < n; ++k) {
    int piv = k;
    for (int i = k + 1; i < n; ++i) {
      if (std::abs(a[i * n + k]) > std::abs(a[piv * n + k])) piv = i;
    }
    if (std::abs(a[piv * n + k]) < 1e-300) {
      throw std::runtime_error("dense_normal_logpdf: singular covariance");
    }
    if (piv != k) {
      for (int j = 0; j < n; ++j) std::swap(a[k * n + j], a[piv * n + j]);
      std::swap(perm[k], perm[piv]);
      det_sign = -det_sign;
    }
    for (int i = k + 1; i < n; ++i) {
      const double f = a[i * n + k] / a[k * n + k];
      a[i * n + k] = f;
      for (int j = k + 1; j < n; ++j) a[i * n + j] -= f * a[k * n + j];
    }
  }
  double log_det = 0.0;
  double sign = det_sign;
  for (int k = 0; k < n; ++k) {
    sign *= a[k * n + k] > 0.0 ? 1.0 : -1.0;
    log_det += std::log(std::abs(a[k * n + k]));
  }
  if (sign <= 0.0) {
    throw std::runtime_error("dense_normal_logpdf: covariance not positive definite");
  }
  // Solve cov * x = (z - mean) through the factorization.
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i) x[i] = z[perm[i]] - mean[perm[i]];
  for (int i = 1; i < n; ++i) {
    for (int j = 0; j < i; ++j) x[i] -= a[i * n + j] * x[j];
  }
  for (int i = n - 1; i >= 0; --i) {
    for (int j = i + 1; j < n; ++j) x[i] -= a[i * n + j] * x[j];
    x[i] /= a[i * n + i];
  }
  // x solves cov * x = (z - mean) in natural ordering.
  double quad = 0.0;
  for (int i = 0; i < n; ++i) quad += (z[i] - mean[i]) * x[i];
  return -0.5 * n * kLog2Pi - 0.5 * log_det - 0.5 * quad;
}

Eigen::VectorXd finite_difference_gradient(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& v, double step) {
  Eigen::VectorXd grad(v.size());
  Eigen::VectorXd x = v;
  for (int i = 0; i < v.size(); ++i) {
    x[i] = v[i] + step;
    const double hi = f(x);
    x[i] = v[i] - step;
    const double lo = f(x);
    x[i] = v[i];
    grad[i] = (hi - lo) / (2.0 * step);
  }
  return grad;
}

RandomInstance random_instance(Rng& rng, int max_obs) {
  const int C = static_cast<int>(rng.uniform_int(1, 3));
  const int T = static_cast<int>(rng.uniform_int(3, 10));
  const int n = static_cast<int>(rng.uniform_int(2, max_obs));
  const int year0 = 2000;

  std::vector<Observation> obs;
  std::int64_t id = 1;
  // A few PMA series with distinct years, the rest independent.
  for (int i = 0; i < n; ++i) {
    Observation o;
    o.id = id++;
    const int c = static_cast<int>(rng.uniform_int(0, C - 1));
    o.population = "R" + std::to_string(c + 1);
    o.indicator = Indicator::PrimaryProportion;
    const double pick = rng.uniform();
    if (pick < 0.4) {
      o.source_type = SourceType::PMA;
      o.pma_series_id = rng.uniform() < 0.5 ? "a" : "b";
    } else if (pick < 0.55) {
      o.source_type = SourceType::DHS;
    } else if (pick < 0.7) {
      o.source_type = SourceType::MICS;
    } else if (pick < 0.85) {
      o.source_type = SourceType::National;
    } else {
      o.source_type = SourceType::Other;
    }
    o.year = year0 + static_cast<int>(rng.uniform_int(0, T - 1));
    o.value = rng.uniform(0.05, 0.95);
    o.sampling_variance = rng.uniform(1e-5, 4e-3);
    o.char_mismatch = rng.uniform() < 0.25;
    obs.push_back(o);
  }
  // Deduplicate PMA (population, series, year) collisions by shifting ids
  // into the independent pool.
  std::set<std::tuple<std::string, std::string, int>> seen;
  for (auto& o : obs) {
    if (o.source_type != SourceType::PMA) continue;
    auto key = std::make_tuple(o.population, *o.pma_series_id, o.year);
    if (!seen.insert(key).second) {
      o.source_type = SourceType::National;
      o.pma_series_id.reset();
    }
  }

  OutlierClassification cls;
  cls.possibly_outlying.resize(obs.size());
  cls.flag_step.assign(obs.size(), FlagStep::None);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    cls.possibly_outlying[i] = rng.uniform() < 0.3;
  }

  RandomInstance inst;
  inst.data = build_dataset(obs, Indicator::PrimaryProportion, cls, year0,
                            year0 + T - 1);
  inst.eta.resize(inst.data.grid.n_populations(), T);
  for (int c = 0; c < inst.data.grid.n_populations(); ++c) {
    for (int t = 0; t < T; ++t) inst.eta(c, t) = rng.uniform(-2.0, 1.0);
  }
  for (int s = 0; s < kNumSourceScales; ++s) {
    inst.params.source_scale[s] = rng.uniform(0.01, 0.4);
  }
  inst.params.char_scale = rng.uniform(0.01, 0.4);
  inst.params.tau = rng.uniform(0.005, 0.2);
  inst.params.slab = rng.uniform(0.3, 1.5);
  inst.params.rho_pma = rng.uniform(0.05, 0.95);
  inst.params.local_scale.resize(inst.data.structure.n_outliers());
  for (auto& g : inst.params.local_scale) g = rng.uniform(0.05, 8.0);
  return inst;
}

}  // namespace nos
