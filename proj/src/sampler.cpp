#include "nos/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "nos/math.hpp"

namespace nos {

std::vector<std::string> LogDensityTarget::constrained_names() const {
  std::vector<std::string> names(dim());
  for (int i = 0; i < dim(); ++i) names[i] = "x[" + std::to_string(i) + "]";
  return names;
}

Eigen::VectorXd LogDensityTarget::constrain_draw(const Eigen::VectorXd& pos) const {
  return pos;
}

Eigen::VectorXd LogDensityTarget::init_point(Rng& rng) const {
  Eigen::VectorXd v(dim());
  for (int i = 0; i < dim(); ++i) v[i] = rng.uniform(-2.0, 2.0);
  return v;
}

int PosteriorDraws::param_index(const std::string& name) const {
  for (int i = 0; i < n_params(); ++i) {
    if (names[i] == name) return i;
  }
  return -1;
}

std::vector<double> PosteriorDraws::flat(int param) const {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n_chains()) * n_draws());
  for (const auto& m : chains) {
    for (int d = 0; d < m.rows(); ++d) out.push_back(m(d, param));
  }
  return out;
}

double PosteriorDraws::divergence_rate() const {
  std::size_t total = 0, bad = 0;
  for (const auto& chain : divergent) {
    total += chain.size();
    for (auto f : chain) bad += f;
  }
  return total == 0 ? 0.0 : static_cast<double>(bad) / static_cast<double>(total);
}

namespace {

constexpr double kMaxEnergyError = 1000.0;  // divergence threshold

struct PhasePoint {
  Eigen::VectorXd q, p, grad;
  double lp = 0.0;
};

struct Proposal {
  Eigen::VectorXd q, grad;
  double lp = 0.0;
};

class NutsChain {
 public:
  NutsChain(const LogDensityTarget& target, double target_accept, int max_depth,
            Rng rng)
      : target_(target), rng_(std::move(rng)), target_accept_(target_accept),
        max_depth_(max_depth), inv_metric_(Eigen::VectorXd::Ones(target.dim())) {}

  void initialize() {
    const int tries = 100;
    for (int attempt = 0; attempt < tries; ++attempt) {
      cur_.q = target_.init_point(rng_);
      cur_.p = Eigen::VectorXd::Zero(target_.dim());
      cur_.grad.resize(target_.dim());
      cur_.lp = target_.log_density_grad(cur_.q, cur_.grad);
      if (std::isfinite(cur_.lp) && cur_.grad.allFinite()) return;
    }
    throw std::runtime_error("sampler: failed to find a starting point with finite log density");
  }

  double kinetic(const Eigen::VectorXd& p) const {
    return 0.5 * p.cwiseProduct(inv_metric_).dot(p);
  }

  void leapfrog(PhasePoint& s, double step) const {
    s.p += 0.5 * step * s.grad;
    s.q += step * inv_metric_.cwiseProduct(s.p);
    s.lp = target_.log_density_grad(s.q, s.grad);
    s.p += 0.5 * step * s.grad;
  }

  /// Crude bisection of the one-step acceptance probability around 1/2.
  double find_reasonable_step_size() {
    double eps = 1.0;
    PhasePoint probe = cur_;
    probe.p.resize(target_.dim());
    for (int i = 0; i < probe.p.size(); ++i) {
      probe.p[i] = rng_.normal() / std::sqrt(inv_metric_[i]);
    }
    const double h0 = probe.lp - kinetic(probe.p);
    auto log_accept = [&](double step) {
      PhasePoint s = probe;
      leapfrog(s, step);
      const double h = s.lp - kinetic(s.p);
      const double delta = h - h0;
      return std::isfinite(delta) ? delta : -std::numeric_limits<double>::infinity();
    };
    const double log_half = std::log(0.5);
    double a = log_accept(eps);
    const int dir = a > log_half ? 1 : -1;
    for (int iter = 0; iter < 100; ++iter) {
      eps = dir > 0 ? eps * 2.0 : eps * 0.5;
      a = log_accept(eps);
      if ((dir > 0 && a < log_half) || (dir < 0 && a > log_half)) break;
      if (eps > 1e7 || eps < 1e-10) break;
    }
    return std::clamp(eps, 1e-10, 1e7);
  }

  struct Tree {
    PhasePoint fwd, bck;
    Eigen::VectorXd rho;
    Proposal prop;
    double log_w = 0.0;
    bool valid = false;
  };

  bool no_uturn(const Eigen::VectorXd& rho, const Eigen::VectorXd& p_bck,
                const Eigen::VectorXd& p_fwd) const {
    return rho.cwiseProduct(inv_metric_).dot(p_bck) > 0.0 &&
           rho.cwiseProduct(inv_metric_).dot(p_fwd) > 0.0;
  }

  void build_tree(int depth, int dir, const PhasePoint& from, double h0, double eps,
                  Tree& out, double& sum_accept, int& n_leapfrog, bool& divergent) {
    if (depth == 0) {
      PhasePoint s = from;
      leapfrog(s, dir * eps);
      ++n_leapfrog;
      const double h = s.lp - kinetic(s.p);
      const double delta = h - h0;
      if (!std::isfinite(delta) || delta < -kMaxEnergyError) {
        divergent = true;
        out.valid = false;
        return;
      }
      sum_accept += std::min(1.0, std::exp(delta));
      out.fwd = s;
      out.bck = s;
      out.rho = s.p;
      out.prop = Proposal{s.q, s.grad, s.lp};
      out.log_w = delta;
      out.valid = true;
      return;
    }
    Tree inner;
    build_tree(depth - 1, dir, from, h0, eps, inner, sum_accept, n_leapfrog, divergent);
    if (!inner.valid) {
      out.valid = false;
      return;
    }
    Tree outer;
    build_tree(depth - 1, dir, dir > 0 ? inner.fwd : inner.bck, h0, eps, outer,
               sum_accept, n_leapfrog, divergent);
    if (!outer.valid) {
      out.valid = false;
      return;
    }
    out.log_w = log_sum_exp(inner.log_w, outer.log_w);
    out.prop = rng_.uniform() < std::exp(outer.log_w - out.log_w) ? outer.prop
                                                                  : inner.prop;
    out.rho = inner.rho + outer.rho;
    if (dir > 0) {
      out.bck = inner.bck;
      out.fwd = outer.fwd;
    } else {
      out.bck = outer.bck;
      out.fwd = inner.fwd;
    }
    out.valid = no_uturn(out.rho, out.bck.p, out.fwd.p);
  }

  struct TransitionInfo {
    double accept_stat = 0.0;
    int depth = 0;
    bool divergent = false;
  };

  TransitionInfo transition(double eps) {
    for (int i = 0; i < cur_.p.size(); ++i) {
      cur_.p[i] = rng_.normal() / std::sqrt(inv_metric_[i]);
    }
    const double h0 = cur_.lp - kinetic(cur_.p);

    PhasePoint fwd = cur_, bck = cur_;
    Eigen::VectorXd rho = cur_.p;
    Proposal prop{cur_.q, cur_.grad, cur_.lp};
    double traj_log_w = 0.0;

    double sum_accept = 0.0;
    int n_leapfrog = 0;
    bool divergent = false;
    int depth = 0;
    while (depth < max_depth_) {
      const int dir = rng_.uniform() < 0.5 ? -1 : 1;
      Tree sub;
      build_tree(depth, dir, dir > 0 ? fwd : bck, h0, eps, sub, sum_accept,
                 n_leapfrog, divergent);
      if (!sub.valid) break;
      // Progressive sampling, biased toward the fresh subtree.
      if (rng_.uniform() < std::exp(std::min(0.0, sub.log_w - traj_log_w))) {
        prop = sub.prop;
      }
      traj_log_w = log_sum_exp(traj_log_w, sub.log_w);
      rho += sub.rho;
      if (dir > 0) {
        fwd = sub.fwd;
      } else {
        bck = sub.bck;
      }
      ++depth;
      if (!no_uturn(rho, bck.p, fwd.p)) break;
    }
    cur_.q = prop.q;
    cur_.grad = prop.grad;
    cur_.lp = prop.lp;

    TransitionInfo info;
    info.accept_stat = n_leapfrog > 0 ? sum_accept / n_leapfrog : 0.0;
    info.depth = depth;
    info.divergent = divergent;
    return info;
  }

  const PhasePoint& state() const { return cur_; }
  Eigen::VectorXd& inv_metric() { return inv_metric_; }
  Rng& rng() { return rng_; }
  double target_accept() const { return target_accept_; }

 private:
  const LogDensityTarget& target_;
  Rng rng_;
  double target_accept_;
  int max_depth_;
  Eigen::VectorXd inv_metric_;
  PhasePoint cur_;
};

struct DualAveraging {
  double mu = 0.0, log_eps = 0.0, log_eps_bar = 0.0, h_bar = 0.0;
  int counter = 0;
  static constexpr double kGamma = 0.05, kT0 = 10.0, kKappa = 0.75;

  void restart(double eps0) {
    mu = std::log(10.0 * eps0);
    log_eps = std::log(eps0);
    log_eps_bar = 0.0;
    h_bar = 0.0;
    counter = 0;
  }
  void update(double accept, double target) {
    ++counter;
    const double eta = 1.0 / (counter + kT0);
    h_bar = (1.0 - eta) * h_bar + eta * (target - accept);
    log_eps = mu - std::sqrt(static_cast<double>(counter)) / kGamma * h_bar;
    const double x = std::pow(counter, -kKappa);
    log_eps_bar = x * log_eps + (1.0 - x) * log_eps_bar;
  }
  double current() const { return std::exp(log_eps); }
  double adapted() const { return std::exp(log_eps_bar); }
};

/// Streaming mean/variance accumulator for metric windows.
struct Welford {
  Eigen::VectorXd mean, m2;
  long n = 0;
  void reset(int dim) {
    mean = Eigen::VectorXd::Zero(dim);
    m2 = Eigen::VectorXd::Zero(dim);
    n = 0;
  }
  void add(const Eigen::VectorXd& x) {
    ++n;
    const Eigen::VectorXd delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta.cwiseProduct(x - mean);
  }
  Eigen::VectorXd variance() const {
    return n > 1 ? (m2 / static_cast<double>(n - 1)).eval()
                 : Eigen::VectorXd::Ones(mean.size());
  }
};

struct WarmupWindows {
  int init_buffer = 75, term_buffer = 50, base_window = 25;
  int warmup = 0;

  explicit WarmupWindows(int warmup_iters) : warmup(warmup_iters) {
    if (init_buffer + base_window + term_buffer > warmup) {
      init_buffer = static_cast<int>(0.15 * warmup);
      term_buffer = static_cast<int>(0.10 * warmup);
      base_window = warmup - init_buffer - term_buffer;
    }
  }
  bool adapt_metric() const { return base_window > 0; }
};

struct ChainResult {
  Eigen::MatrixXd draws;
  Eigen::VectorXd lp;
  std::vector<int> tree_depth;
  std::vector<std::uint8_t> divergent;
  double step_size = 0.0;
};

ChainResult run_chain(const LogDensityTarget& target, const SamplerConfig& config,
                      int chain_index) {
  NutsChain chain(target, config.target_accept, config.max_depth,
                  Rng::substream(config.seed, static_cast<std::uint64_t>(chain_index)));
  chain.initialize();

  double eps = chain.find_reasonable_step_size();
  DualAveraging da;
  da.restart(eps);

  const WarmupWindows windows(config.warmup);
  Welford accum;
  accum.reset(target.dim());
  int window_end = windows.init_buffer + windows.base_window;
  int window_size = windows.base_window;
  const int collect_end = config.warmup - windows.term_buffer;

  const auto names = target.constrained_names();
  ChainResult out;
  out.draws.resize(config.draws, static_cast<int>(names.size()));
  out.lp.resize(config.draws);
  out.tree_depth.resize(config.draws);
  out.divergent.resize(config.draws);

  for (int iter = 0; iter < config.warmup + config.draws; ++iter) {
    const bool warming = iter < config.warmup;
    const auto info = chain.transition(eps);

    if (warming) {
      da.update(info.accept_stat, chain.target_accept());
      eps = da.current();
      if (windows.adapt_metric() && iter >= windows.init_buffer && iter < collect_end) {
        accum.add(chain.state().q);
        if (iter + 1 == std::min(window_end, collect_end)) {
          const double n = static_cast<double>(accum.n);
          const Eigen::VectorXd var = accum.variance();
          chain.inv_metric() =
              (n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0));
          accum.reset(target.dim());
          eps = chain.find_reasonable_step_size();
          da.restart(eps);
          window_size *= 2;
          window_end += window_size;
          if (window_end + 2 * window_size > collect_end) window_end = collect_end;
        }
      }
      if (iter + 1 == config.warmup) eps = da.adapted();
    } else {
      const int d = iter - config.warmup;
      out.draws.row(d) = target.constrain_draw(chain.state().q);
      out.lp[d] = chain.state().lp;
      out.tree_depth[d] = info.depth;
      out.divergent[d] = info.divergent ? 1 : 0;
    }
  }
  out.step_size = eps;
  return out;
}

}  // namespace

PosteriorDraws sample(const LogDensityTarget& target, const SamplerConfig& config) {
  if (config.chains < 1) throw std::invalid_argument("sample: chains must be >= 1");
  if (config.draws < 1) throw std::invalid_argument("sample: draws must be >= 1");
  if (config.warmup < 0) throw std::invalid_argument("sample: negative warmup");
  if (!(config.target_accept > 0.0 && config.target_accept < 1.0)) {
    throw std::invalid_argument("sample: target_accept must lie in (0,1)");
  }
  if (config.max_depth < 1 || config.max_depth > 20) {
    throw std::invalid_argument("sample: max_depth must lie in [1, 20]");
  }

  std::vector<ChainResult> results(config.chains);
  std::vector<std::string> errors(config.chains);
  const bool parallel = config.parallel_chains && config.chains > 1;
#pragma omp parallel for schedule(dynamic, 1) if (parallel)
  for (int c = 0; c < config.chains; ++c) {
    try {
      results[c] = run_chain(target, config, c);
    } catch (const std::exception& e) {
      errors[c] = e.what();
    }
  }
  for (int c = 0; c < config.chains; ++c) {
    if (!errors[c].empty()) {
      std::ostringstream m;
      m << "chain " << c + 1 << " failed: " << errors[c];
      throw std::runtime_error(m.str());
    }
  }

  PosteriorDraws draws;
  draws.names = target.constrained_names();
  draws.seed = config.seed;
  draws.warmup = config.warmup;
  for (auto& r : results) {
    draws.chains.push_back(std::move(r.draws));
    draws.lp.push_back(std::move(r.lp));
    draws.tree_depth.push_back(std::move(r.tree_depth));
    draws.divergent.push_back(std::move(r.divergent));
    draws.step_size.push_back(r.step_size);
  }
  return draws;
}

}  // namespace nos
