#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "nos/math.hpp"
#include "nos/sim.hpp"

using namespace nos;

TEST_CASE("noiseless designs reproduce the latent curve exactly") {
  SimDesign design = testing::toy_design(21, 2, 8);
  design.truth.source_scale = {0.0, 0.0, 0.0, 0.0};
  design.truth.char_scale = 0.0;
  design.char_fraction = 0.0;
  design.n_eff_min = design.n_eff_max = 1e15;  // vanishing sampling error
  const SimResult r = simulate_dataset(design);
  for (const auto& o : r.obs) {
    const int c = r.truth.spec.population_index(o.population);
    const double eta = r.truth.eta(c, r.truth.spec.year_index(o.year));
    CHECK(o.value == doctest::Approx(inv_logit(eta)).epsilon(1e-6));
  }
}

TEST_CASE("fixed seeds give bit-identical datasets, replicates differ") {
  const SimDesign design = testing::toy_design(33);
  const SimResult a = simulate_dataset(design, 2);
  const SimResult b = simulate_dataset(design, 2);
  REQUIRE(a.obs.size() == b.obs.size());
  for (std::size_t i = 0; i < a.obs.size(); ++i) {
    CHECK(a.obs[i].value == b.obs[i].value);
    CHECK(a.obs[i].year == b.obs[i].year);
  }
  CHECK((a.truth.eta - b.truth.eta).cwiseAbs().maxCoeff() == 0.0);
  const SimResult c = simulate_dataset(design, 3);
  CHECK(a.obs[0].value != c.obs[0].value);
}

TEST_CASE("generated MICS error variance matches the additivity formula") {
  SimDesign design;
  design.seed = 5;
  design.n_populations = 1;
  design.n_years = 3;
  design.obs_per_source = {{SourceType::MICS, 1}};
  design.truth.source_scale = {0.19, 0.1, 0.015, 0.1};
  design.n_eff_min = design.n_eff_max = 1000.0;
  design.curve.intercept_sd = 0.0;
  design.curve.slope_sd = 0.0;
  design.curve.intercept_mean = -0.5;
  design.curve.slope_mean = 0.0;

  const int reps = 100000;
  double sum = 0.0, sumsq = 0.0;
  double expected_var = 0.0;
  for (int r = 0; r < reps; ++r) {
    const SimResult out = simulate_dataset(design, r);
    const auto& o = out.obs[0];
    const int c = 0;
    const double eta = out.truth.eta(c, out.truth.spec.year_index(o.year));
    const double err = logit(o.value) - eta;
    sum += err;
    sumsq += err * err;
    if (r == 0) {
      const double phi = inv_logit(eta);
      expected_var = delta_logit_variance(phi, phi * (1.0 - phi) / 1000.0) +
                     0.19 * 0.19;
    }
  }
  const double var = (sumsq - sum * sum / reps) / (reps - 1);
  CHECK(std::abs(var - expected_var) / expected_var < 0.02);
}

TEST_CASE("PMA errors are strongly correlated when rho is near one") {
  SimDesign design;
  design.seed = 6;
  design.n_populations = 1;
  design.n_years = 4;
  design.obs_per_source = {{SourceType::PMA, 2}};
  design.truth.source_scale = {0.19, 0.2, 0.015, 0.1};
  design.truth.rho_pma = 0.999;
  design.n_eff_min = design.n_eff_max = 1e9;  // tiny sampling error
  design.curve.intercept_sd = 0.0;
  design.curve.slope_sd = 0.0;

  const int reps = 10000;
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (int r = 0; r < reps; ++r) {
    const SimResult out = simulate_dataset(design, r);
    REQUIRE(out.obs.size() == 2);
    const auto err = [&](const Observation& o) {
      return logit(o.value) -
             out.truth.eta(0, out.truth.spec.year_index(o.year));
    };
    const double x = err(out.obs[0]);
    const double y = err(out.obs[1]);
    sx += x;
    sy += y;
    sxx += x * x;
    syy += y * y;
    sxy += x * y;
  }
  const double corr = (sxy - sx * sy / reps) /
                      std::sqrt((sxx - sx * sx / reps) * (syy - sy * sy / reps));
  CHECK(corr > 0.99);
}

TEST_CASE("injections shift the targeted observation") {
  SimDesign design = testing::toy_design(40, 1, 10);
  SimDesign clean = design;
  // National years for count 2 over 2006..2015 land on 2008 and 2013.
  design.injections = {{"P1", 2008, SourceType::National, 1.0}};
  const SimResult with = simulate_dataset(design);
  const SimResult without = simulate_dataset(clean);
  REQUIRE(with.obs.size() == without.obs.size());
  int shifted = 0;
  for (std::size_t i = 0; i < with.obs.size(); ++i) {
    if (with.obs[i].value != without.obs[i].value) {
      ++shifted;
      CHECK(with.obs[i].source_type == SourceType::National);
      CHECK(with.obs[i].year == 2008);
      CHECK(logit(with.obs[i].value) - logit(without.obs[i].value) ==
            doctest::Approx(1.0).epsilon(1e-9));
    }
  }
  CHECK(shifted == 1);

  design.injections = {{"P1", 2099, SourceType::National, 1.0}};
  CHECK_THROWS_AS(simulate_dataset(design), std::invalid_argument);
}

TEST_CASE("dense normal log density oracle") {
  SUBCASE("one dimension at the mean") {
    Eigen::VectorXd z(1), mu(1);
    z << 0.0;
    mu << 0.0;
    Eigen::MatrixXd cov(1, 1);
    cov << 1.0;
    CHECK(dense_normal_logpdf(z, mu, cov) == doctest::Approx(-0.918939).epsilon(1e-6));
  }
  SUBCASE("identity covariance factorizes") {
    Eigen::VectorXd z(2), mu(2);
    z << 0.3, -1.2;
    mu << 0.1, 0.4;
    const Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(2, 2);
    const double expect =
        normal_logpdf(0.3, 0.1, 1.0) + normal_logpdf(-1.2, 0.4, 1.0);
    CHECK(dense_normal_logpdf(z, mu, cov) == doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("rejects an indefinite matrix") {
    Eigen::VectorXd z(2), mu(2);
    z << 0.0, 0.0;
    mu << 0.0, 0.0;
    Eigen::MatrixXd cov(2, 2);
    cov << 1.0, 2.0, 2.0, 1.0;  // eigenvalues 3 and -1
    CHECK_THROWS_AS(dense_normal_logpdf(z, mu, cov), std::runtime_error);
  }
  SUBCASE("random five-dimensional pairing with the block evaluator") {
    Rng rng(55);
    for (int k = 0; k < 20; ++k) {
      // Random SPD covariance via A A^T + jitter.
      Eigen::MatrixXd A(5, 5);
      for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) A(i, j) = rng.normal();
      }
      const Eigen::MatrixXd cov =
          A * A.transpose() + 0.5 * Eigen::MatrixXd::Identity(5, 5);
      Eigen::VectorXd z(5), mu(5);
      for (int i = 0; i < 5; ++i) {
        z[i] = rng.normal();
        mu[i] = rng.normal();
      }
      // Cholesky route, written out directly.
      const Eigen::LLT<Eigen::MatrixXd> llt(cov);
      const Eigen::VectorXd r = z - mu;
      double logdet = 0.0;
      const Eigen::MatrixXd L = llt.matrixL();
      for (int i = 0; i < 5; ++i) logdet += std::log(L(i, i));
      const double chol =
          -0.5 * 5 * kLog2Pi - logdet - 0.5 * r.dot(llt.solve(r));
      CHECK(dense_normal_logpdf(z, mu, cov) == doctest::Approx(chol).epsilon(1e-11));
    }
  }
}

TEST_CASE("finite difference gradient oracle") {
  SUBCASE("quadratic with known gradient") {
    Eigen::MatrixXd H(3, 3);
    H << 2.0, 0.3, 0.0, 0.3, 1.5, -0.2, 0.0, -0.2, 0.9;
    Eigen::VectorXd b(3);
    b << 0.5, -1.0, 2.0;
    const auto f = [&](const Eigen::VectorXd& x) {
      return 0.5 * x.dot(H * x) + b.dot(x);
    };
    Eigen::VectorXd v(3);
    v << 0.2, -0.7, 1.1;
    const Eigen::VectorXd fd = finite_difference_gradient(f, v, 1e-4);
    const Eigen::VectorXd exact = H * v + b;
    CHECK((fd - exact).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("constant function has a zero gradient") {
    const auto f = [](const Eigen::VectorXd&) { return 3.5; };
    const Eigen::VectorXd fd =
        finite_difference_gradient(f, Eigen::VectorXd::Zero(4), 1e-5);
    CHECK(fd.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("design validation messages") {
  SimDesign d = testing::toy_design();
  d.n_populations = 0;
  CHECK(!validate_sim_design(d).empty());
  d = testing::toy_design();
  d.truth.rho_pma = 1.0;
  CHECK(!validate_sim_design(d).empty());
  d = testing::toy_design();
  d.years_by_source[SourceType::National] = {1900};
  CHECK(!validate_sim_design(d).empty());
  CHECK(validate_sim_design(testing::toy_design()).empty());
}
