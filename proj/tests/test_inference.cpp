#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "nos/datamodel.hpp"
#include "nos/diagnostics.hpp"
#include "nos/math.hpp"
#include "nos/model.hpp"
#include "nos/sampler.hpp"
#include "nos/sim.hpp"

using namespace nos;

namespace {

/// Independent standard normal in d dimensions.
class StdNormalTarget final : public LogDensityTarget {
 public:
  explicit StdNormalTarget(int d) : d_(d) {}
  int dim() const override { return d_; }
  double log_density_grad(const Eigen::VectorXd& pos,
                          Eigen::VectorXd& grad) const override {
    grad = -pos;
    return -0.5 * pos.squaredNorm();
  }

 private:
  int d_;
};

/// Correlated bivariate normal with known covariance.
class Corr2Target final : public LogDensityTarget {
 public:
  explicit Corr2Target(double rho) : rho_(rho) {}
  int dim() const override { return 2; }
  double log_density_grad(const Eigen::VectorXd& x,
                          Eigen::VectorXd& grad) const override {
    const double det = 1.0 - rho_ * rho_;
    grad.resize(2);
    grad[0] = -(x[0] - rho_ * x[1]) / det;
    grad[1] = -(x[1] - rho_ * x[0]) / det;
    return -0.5 * (x[0] * x[0] - 2.0 * rho_ * x[0] * x[1] + x[1] * x[1]) / det;
  }

 private:
  double rho_;
};

}  // namespace

TEST_CASE("unconstrain round trip and jacobian values") {
  const Model model = testing::toy_model(testing::toy_design());
  Rng rng(1);
  const Eigen::VectorXd v = model.init_point(rng);
  const ConstrainedParams cp = model.constrain(v);
  const auto [v2, lj] = model.unconstrain(cp);
  CHECK((v - v2).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(lj == doctest::Approx(model.log_jacobian(v)).epsilon(1e-12));

  // tau = 1 contributes 0; rho = 0.5 contributes log(1/4).
  Eigen::VectorXd w = v;
  w[model.layout().tau_offset] = 0.0;
  const double with_tau1 = model.log_jacobian(w);
  w[model.layout().tau_offset] = 1.0;
  CHECK(model.log_jacobian(w) - with_tau1 == doctest::Approx(1.0).epsilon(1e-12));

  Eigen::VectorXd u = v;
  u[model.layout().rho_offset] = 0.0;
  const ConstrainedParams cpu = model.constrain(u);
  CHECK(cpu.dm.rho_pma == doctest::Approx(0.5).epsilon(1e-14));
  Eigen::VectorXd u2 = u;
  u2[model.layout().rho_offset] = logit(0.75);
  const double jac_at_half = model.log_jacobian(u);
  const double jac_at_34 = model.log_jacobian(u2);
  CHECK(jac_at_half - jac_at_34 ==
        doctest::Approx(std::log(0.25) - std::log(0.75 * 0.25)).epsilon(1e-12));
}

TEST_CASE("log posterior decomposes into its three terms plus jacobian") {
  const Model model = testing::toy_model(testing::toy_design(7));
  Rng rng(2);
  const Eigen::VectorXd v = model.init_point(rng);
  const ConstrainedParams cp = model.constrain(v);

  const double data = data_log_density(model.data(), cp.eta, cp.dm);
  const double dm_prior =
      datamodel_log_prior(cp.dm, model.priors(), model.data().structure.n_outliers());
  const auto process = make_process_model("rw2");
  const double proc = process->log_prior(model.data().grid, cp.eta, cp.process_params);
  const double expect = data + dm_prior + proc + model.log_jacobian(v);
  CHECK(model.log_density(v) == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("gradient matches central finite differences on a toy model") {
  const Model model = testing::toy_model(testing::toy_design(3));
  Rng rng(3);
  Eigen::VectorXd grad(model.dim());
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::VectorXd v = model.init_point(rng);
    model.log_density_grad(v, grad);
    const Eigen::VectorXd fd = finite_difference_gradient(
        [&](const Eigen::VectorXd& x) { return model.log_density(x); }, v, 1e-5);
    for (int i = 0; i < model.dim(); ++i) {
      const double allowed = std::max(1e-7, 1e-5 * std::abs(fd[i]));
      CHECK(std::abs(grad[i] - fd[i]) <= allowed);
    }
  }
}

TEST_CASE("rho gradient vanishes without multi-observation PMA blocks") {
  SimDesign design = testing::toy_design(11);
  design.obs_per_source[SourceType::PMA] = 1;  // singleton blocks only
  const Model model = testing::toy_model(design);
  Rng rng(4);
  const Eigen::VectorXd v = model.init_point(rng);
  Eigen::VectorXd grad(model.dim());
  model.log_density_grad(v, grad);
  // Only the uniform prior (zero) and the logit jacobian remain.
  const double rho = model.constrain(v).dm.rho_pma;
  CHECK(grad[model.layout().rho_offset] ==
        doctest::Approx(1.0 - 2.0 * rho).epsilon(1e-10));
}

TEST_CASE("population translation leaves second-difference gradients alone") {
  const Model model = testing::toy_model(testing::toy_design(5));
  Rng rng(5);
  Eigen::VectorXd v = model.init_point(rng);
  Eigen::VectorXd g1(model.dim()), g2(model.dim());
  model.log_density_grad(v, g1);
  const auto& L = model.layout();
  // Shift every eta of population 0 and its level by the same delta: the
  // difference-penalty gradients cancel, data and level terms move.
  Eigen::VectorXd w = v;
  const double delta = 0.3;
  for (int t = 0; t < L.n_years; ++t) w[L.eta_index(0, t)] += delta;
  model.log_density_grad(w, g2);
  // Second differences of population 0 are unchanged, so the lambda
  // gradient for population 0 must be identical.
  const int lambda0 = L.process_offset + L.n_pop;  // first lambda coordinate
  CHECK(g2[lambda0] == doctest::Approx(g1[lambda0]).epsilon(1e-9));
  // Other populations' eta gradients are untouched.
  CHECK(g2[L.eta_index(1, 2)] == doctest::Approx(g1[L.eta_index(1, 2)]).epsilon(1e-9));
}

TEST_CASE("log posterior reduces to prior plus jacobian without data") {
  // Build a one-observation dataset, then compare against the same model
  // evaluated on a dataset whose observation list is emptied by hand.
  const Model model = testing::toy_model(testing::toy_design(9, 2, 6));
  Rng rng(6);
  const Eigen::VectorXd v = model.init_point(rng);
  const ConstrainedParams cp = model.constrain(v);
  const auto process = make_process_model("rw2");
  const double prior_only =
      datamodel_log_prior(cp.dm, model.priors(), model.data().structure.n_outliers()) +
      process->log_prior(model.data().grid, cp.eta, cp.process_params) +
      model.log_jacobian(v);
  const double data = data_log_density(model.data(), cp.eta, cp.dm);
  CHECK(model.log_density(v) - data == doctest::Approx(prior_only).epsilon(1e-9));
}

TEST_CASE("sampler recovers a 10-d standard normal") {
  StdNormalTarget target(10);
  SamplerConfig cfg;
  cfg.chains = 4;
  cfg.warmup = 500;
  cfg.draws = 1000;
  cfg.seed = 99;
  const PosteriorDraws draws = sample(target, cfg);
  CHECK(draws.n_chains() == 4);
  CHECK(draws.n_draws() == 1000);
  for (int p = 0; p < 10; ++p) {
    const auto x = draws.flat(p);
    const double m = mean(x);
    const double sd = std::sqrt(sample_variance(x));
    CHECK(std::abs(m) < 0.05);
    CHECK(std::abs(sd - 1.0) < 0.05);
  }
  CHECK(draws.divergence_rate() < 0.01);
}

TEST_CASE("sampler is bit-reproducible for a fixed seed") {
  StdNormalTarget target(5);
  SamplerConfig cfg;
  cfg.chains = 2;
  cfg.warmup = 200;
  cfg.draws = 100;
  cfg.seed = 1234;
  const PosteriorDraws a = sample(target, cfg);
  const PosteriorDraws b = sample(target, cfg);
  for (int c = 0; c < 2; ++c) {
    CHECK((a.chains[c] - b.chains[c]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.lp[c] - b.lp[c]).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(a.step_size == b.step_size);
}

TEST_CASE("sampler covariance matches a correlated normal target") {
  Corr2Target target(0.9);
  SamplerConfig cfg;
  cfg.chains = 4;
  cfg.warmup = 500;
  cfg.draws = 2000;
  cfg.seed = 31;
  const PosteriorDraws draws = sample(target, cfg);
  const auto x = draws.flat(0);
  const auto y = draws.flat(1);
  const double mx = mean(x), my = mean(y);
  double cxx = 0.0, cyy = 0.0, cxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    cxx += (x[i] - mx) * (x[i] - mx);
    cyy += (y[i] - my) * (y[i] - my);
    cxy += (x[i] - mx) * (y[i] - my);
  }
  const double n = static_cast<double>(x.size());
  CHECK(std::abs(cxx / n - 1.0) < 0.1);
  CHECK(std::abs(cyy / n - 1.0) < 0.1);
  CHECK(std::abs(cxy / n - 0.9) < 0.1);
}

TEST_CASE("sampler configuration validation") {
  StdNormalTarget target(2);
  SamplerConfig cfg;
  cfg.chains = 0;
  CHECK_THROWS_AS(sample(target, cfg), std::invalid_argument);
  cfg = SamplerConfig{};
  cfg.target_accept = 1.2;
  CHECK_THROWS_AS(sample(target, cfg), std::invalid_argument);
  cfg = SamplerConfig{};
  cfg.max_depth = 0;
  CHECK_THROWS_AS(sample(target, cfg), std::invalid_argument);
}

TEST_CASE("diagnostics") {
  SUBCASE("constant chains flagged degenerate") {
    PosteriorDraws d;
    d.names = {"a"};
    Eigen::MatrixXd m = Eigen::MatrixXd::Constant(50, 1, 3.25);
    d.chains = {m, m};
    const auto diag = diagnostics(d);
    CHECK(diag[0].degenerate);
    CHECK(!std::isinf(diag[0].rhat));  // flagged, not propagated
  }
  SUBCASE("white noise passes cleanly") {
    Rng rng(8);
    PosteriorDraws d;
    d.names = {"a", "b"};
    for (int c = 0; c < 4; ++c) {
      Eigen::MatrixXd m(1000, 2);
      for (int i = 0; i < 1000; ++i) {
        m(i, 0) = rng.normal();
        m(i, 1) = rng.normal(2.0, 0.5);
      }
      d.chains.push_back(m);
    }
    const auto diag = diagnostics(d);
    for (const auto& pd : diag) {
      CHECK(!pd.degenerate);
      CHECK(pd.rhat < 1.01);
      CHECK(pd.ess > 3000.0);
    }
  }
  SUBCASE("a shifted chain is caught") {
    Rng rng(12);
    PosteriorDraws d;
    d.names = {"a"};
    for (int c = 0; c < 4; ++c) {
      Eigen::MatrixXd m(1000, 1);
      for (int i = 0; i < 1000; ++i) m(i, 0) = rng.normal() + (c == 3 ? 5.0 : 0.0);
      d.chains.push_back(m);
    }
    const auto diag = diagnostics(d);
    CHECK(diag[0].rhat > 2.0);
  }
  SUBCASE("input validation") {
    PosteriorDraws d;
    d.names = {"a"};
    d.chains = {Eigen::MatrixXd::Zero(50, 1)};
    CHECK_THROWS_AS(diagnostics(d), std::invalid_argument);
    d.chains = {Eigen::MatrixXd::Zero(2, 1), Eigen::MatrixXd::Zero(2, 1)};
    CHECK_THROWS_AS(diagnostics(d), std::invalid_argument);
  }
}

TEST_CASE("summaries") {
  SUBCASE("degenerate draws reproduce the constant") {
    PosteriorDraws d;
    d.names = {"a"};
    Eigen::MatrixXd m = Eigen::MatrixXd::Constant(40, 1, 1.5);
    d.chains = {m, m};
    const auto table = summarize(d);
    CHECK(table.means[0] == 1.5);
    CHECK(table.medians[0] == 1.5);
    for (double q : table.quantiles[0]) CHECK(q == 1.5);
  }
  SUBCASE("uniform grid of draws") {
    PosteriorDraws d;
    d.names = {"a"};
    Eigen::MatrixXd m(101, 1);
    for (int i = 0; i <= 100; ++i) m(i, 0) = i / 100.0;
    d.chains = {m};
    const auto table = summarize(d);
    CHECK(table.medians[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(table.quantiles[0][1] == doctest::Approx(0.05).epsilon(1e-9));
  }
  SUBCASE("phi rows transform before the quantiles") {
    Rng rng(14);
    PosteriorDraws d;
    d.names = {"eta[A:2005]"};
    Eigen::MatrixXd m(500, 1);
    for (int i = 0; i < 500; ++i) m(i, 0) = rng.normal(-0.4, 0.8);
    d.chains = {m};
    const auto table = summarize(d);
    REQUIRE(table.names.size() == 2);
    CHECK(table.names[1] == "phi[A:2005]");
    // direct oracle: transform every draw, then take quantiles
    std::vector<double> phi(500);
    for (int i = 0; i < 500; ++i) phi[i] = inv_logit(m(i, 0));
    std::sort(phi.begin(), phi.end());
    CHECK(table.medians[1] == doctest::Approx(quantile(phi, 0.5)).epsilon(1e-14));
    CHECK(table.quantiles[1][1] == doctest::Approx(quantile(phi, 0.05)).epsilon(1e-14));
    // monotone-transform invariance within order-statistic spacing
    CHECK(table.medians[1] == doctest::Approx(inv_logit(table.medians[0])).epsilon(1e-2));
  }
}
