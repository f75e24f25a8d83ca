// Timing comparison of the serial reference evaluator against the
// OpenMP kernel on a synthetic posterior, across thread counts.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>

#include "nos/model.hpp"
#include "nos/preprocess.hpp"
#include "nos/sim.hpp"

using namespace nos;

namespace {

double time_evals(const Model& model, const Eigen::VectorXd& v, int reps,
                  bool reference, double& checksum) {
  Eigen::VectorXd grad(model.dim());
  const auto start = std::chrono::steady_clock::now();
  double acc = 0.0;
  for (int r = 0; r < reps; ++r) {
    acc += reference ? model.log_density_grad_reference(v, &grad)
                     : model.log_density_grad(v, grad);
  }
  const auto stop = std::chrono::steady_clock::now();
  checksum = acc + grad.sum();
  return std::chrono::duration<double, std::milli>(stop - start).count() /
         static_cast<double>(reps);
}

}  // namespace

int main(int argc, char** argv) {
  const int n_pop = argc > 1 ? std::atoi(argv[1]) : 60;
  const int reps = argc > 2 ? std::atoi(argv[2]) : 200;

  SimDesign design;
  design.seed = 7;
  design.n_populations = n_pop;
  design.n_years = 20;
  design.obs_per_source = {{SourceType::DHS, 4},
                           {SourceType::MICS, 3},
                           {SourceType::National, 3},
                           {SourceType::PMA, 5}};
  design.truth.source_scale = {0.19, 0.1, 0.015, 0.1};
  design.truth.rho_pma = 0.8;
  design.char_fraction = 0.2;
  const SimResult sim = simulate_dataset(design);
  const auto cls = classify_possible_outliers(sim.obs, PreprocessConfig{});
  Dataset ds = build_dataset(sim.obs, design.indicator, cls);
  const Model model(std::move(ds), make_process_model("rw2"), PriorConfig{});

  Rng rng(11);
  const Eigen::VectorXd v = model.init_point(rng);

  std::printf("posterior gradient benchmark: %d populations, %d observations, dim %d, "
              "%d reps\n",
              n_pop, model.data().n_obs(), model.dim(), reps);

  double check_ref = 0.0;
  const double t_ref = time_evals(model, v, reps, true, check_ref);
  std::printf("%-28s %10.4f ms/eval\n", "serial reference", t_ref);

  const int max_threads = omp_get_max_threads();
  for (int threads = 1; threads <= max_threads; threads *= 2) {
    omp_set_num_threads(threads);
    double check_par = 0.0;
    const double t_par = time_evals(model, v, reps, false, check_par);
    const double rel = std::abs(check_par - check_ref) /
                       std::max(1.0, std::abs(check_ref));
    std::printf("omp kernel, %2d thread(s)    %10.4f ms/eval  speedup %5.2fx  "
                "(rel diff vs reference %.2e)\n",
                threads, t_par, t_ref / t_par, rel);
  }
  return 0;
}
