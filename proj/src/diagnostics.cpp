#include "nos/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "nos/domain.hpp"
#include "nos/math.hpp"

namespace nos {

namespace {

/// Splits each chain's draws in half, giving 2x the sequences.
std::vector<std::vector<double>> split_sequences(const PosteriorDraws& draws,
                                                 int param) {
  std::vector<std::vector<double>> seqs;
  const int n = draws.n_draws();
  const int half = n / 2;
  for (const auto& chain : draws.chains) {
    std::vector<double> a(half), b(half);
    for (int i = 0; i < half; ++i) {
      a[i] = chain(i, param);
      b[i] = chain(n - half + i, param);
    }
    seqs.push_back(std::move(a));
    seqs.push_back(std::move(b));
  }
  return seqs;
}

/// Pooled average ranks (ties averaged), then the normal quantile of
/// (rank - 3/8) / (S + 1/4).
std::vector<std::vector<double>> rank_normalize(
    const std::vector<std::vector<double>>& seqs) {
  std::vector<std::pair<double, std::pair<int, int>>> pool;
  for (int j = 0; j < static_cast<int>(seqs.size()); ++j) {
    for (int i = 0; i < static_cast<int>(seqs[j].size()); ++i) {
      pool.push_back({seqs[j][i], {j, i}});
    }
  }
  std::sort(pool.begin(), pool.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  const std::size_t S = pool.size();
  std::vector<std::vector<double>> out(seqs.size());
  for (std::size_t j = 0; j < seqs.size(); ++j) out[j].resize(seqs[j].size());
  std::size_t i = 0;
  while (i < S) {
    std::size_t j = i;
    while (j + 1 < S && pool[j + 1].first == pool[i].first) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    const double z = inv_normal_cdf((avg_rank - 0.375) / (static_cast<double>(S) + 0.25));
    for (std::size_t k = i; k <= j; ++k) {
      out[pool[k].second.first][pool[k].second.second] = z;
    }
    i = j + 1;
  }
  return out;
}

struct PooledStats {
  double W = 0.0;        // mean within-sequence variance
  double B_over_n = 0.0; // variance of sequence means
  double var_plus = 0.0;
  std::vector<double> means, vars;
  int n = 0;
};

PooledStats pooled_stats(const std::vector<std::vector<double>>& seqs) {
  PooledStats st;
  st.n = static_cast<int>(seqs[0].size());
  for (const auto& s : seqs) {
    st.means.push_back(mean(s));
    st.vars.push_back(sample_variance(s));
  }
  st.W = mean(st.vars);
  st.B_over_n = sample_variance(st.means);
  st.var_plus = st.W * (st.n - 1.0) / st.n + st.B_over_n;
  return st;
}

double split_rhat(const PooledStats& st) {
  if (st.W <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return std::sqrt(st.var_plus / st.W);
}

/// Biased (1/n) autocovariance of one sequence at the given lag.
double autocov(const std::vector<double>& x, double m, int lag) {
  const int n = static_cast<int>(x.size());
  double s = 0.0;
  for (int i = 0; i + lag < n; ++i) s += (x[i] - m) * (x[i + lag] - m);
  return s / n;
}

/// Bulk ESS via Geyer's initial monotone sequence of autocorrelation pairs.
double bulk_ess(const std::vector<std::vector<double>>& seqs, const PooledStats& st) {
  const int m = static_cast<int>(seqs.size());
  const int n = st.n;
  if (st.var_plus <= 0.0) return std::numeric_limits<double>::quiet_NaN();

  auto mean_acov = [&](int lag) {
    double s = 0.0;
    for (int j = 0; j < m; ++j) s += autocov(seqs[j], st.means[j], lag);
    return s / m;
  };
  auto rho = [&](int lag) { return 1.0 - (st.W - mean_acov(lag)) / st.var_plus; };

  double sum_pairs = 1.0 + rho(1);  // rho_0 treated as 1
  double prev = sum_pairs;
  if (sum_pairs > 0.0) {
    for (int t = 2; t + 1 < n - 2; t += 2) {
      double pair = rho(t) + rho(t + 1);
      if (pair <= 0.0) break;
      pair = std::min(pair, prev);
      sum_pairs += pair;
      prev = pair;
    }
  } else {
    sum_pairs = 1.0;
  }
  const double tau = std::max(-1.0 + 2.0 * sum_pairs, 1.0 / std::log10(m * n + 10.0));
  double ess = m * static_cast<double>(n) / tau;
  ess = std::min(ess, m * n * std::log10(static_cast<double>(m) * n));
  return ess;
}

}  // namespace

std::vector<ParamDiagnostic> diagnostics(const PosteriorDraws& draws) {
  if (draws.n_chains() < 2) {
    throw std::invalid_argument("diagnostics: need at least 2 chains");
  }
  if (draws.n_draws() < 4) {
    throw std::invalid_argument("diagnostics: need at least 4 draws per chain");
  }
  std::vector<ParamDiagnostic> out(draws.n_params());
  for (int p = 0; p < draws.n_params(); ++p) {
    const auto seqs = split_sequences(draws, p);

    // Degenerate when every pooled value is identical.
    bool constant = true;
    const double first = seqs[0][0];
    for (const auto& s : seqs) {
      for (double x : s) {
        if (x != first) {
          constant = false;
          break;
        }
      }
      if (!constant) break;
    }
    if (constant) {
      out[p].degenerate = true;
      out[p].rhat = std::numeric_limits<double>::quiet_NaN();
      out[p].ess = std::numeric_limits<double>::quiet_NaN();
      continue;
    }

    const auto z = rank_normalize(seqs);
    const PooledStats zstats = pooled_stats(z);
    const PooledStats raw = pooled_stats(seqs);
    const double r_rank = split_rhat(zstats);
    const double r_plain = split_rhat(raw);
    double rhat;
    if (std::isnan(r_rank)) {
      rhat = r_plain;
    } else if (std::isnan(r_plain)) {
      rhat = r_rank;
    } else {
      rhat = std::max(r_rank, r_plain);
    }
    out[p].rhat = rhat;
    out[p].ess = bulk_ess(z, zstats);
    out[p].degenerate = std::isnan(out[p].rhat) || std::isnan(out[p].ess);
  }
  return out;
}

SummaryTable summarize(const PosteriorDraws& draws, std::vector<double> probs) {
  if (draws.n_chains() == 0 || draws.n_draws() == 0) {
    throw std::invalid_argument("summarize: empty draws");
  }
  SummaryTable table;
  table.probs = probs;

  auto add_row = [&](const std::string& name, std::vector<double>& values) {
    std::sort(values.begin(), values.end());
    double s = 0.0;
    for (double v : values) s += v;
    table.names.push_back(name);
    table.means.push_back(s / static_cast<double>(values.size()));
    table.medians.push_back(quantile(values, 0.5));
    std::vector<double> qs;
    qs.reserve(probs.size());
    for (double q : probs) qs.push_back(quantile(values, q));
    table.quantiles.push_back(std::move(qs));
  };

  for (int p = 0; p < draws.n_params(); ++p) {
    std::vector<double> values = draws.flat(p);
    add_row(draws.names[p], values);
  }
  // phi rows: transform first, then summarize.
  for (int p = 0; p < draws.n_params(); ++p) {
    const std::string& name = draws.names[p];
    if (name.rfind("eta[", 0) != 0) continue;
    std::vector<double> values = draws.flat(p);
    for (double& v : values) v = inv_logit(v);
    add_row("phi[" + name.substr(4), values);
  }
  return table;
}

}  // namespace nos
