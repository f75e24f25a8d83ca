#pragma once

#include <memory>
#include <utility>

#include "nos/model.hpp"
#include "nos/preprocess.hpp"
#include "nos/process.hpp"
#include "nos/sim.hpp"

namespace nos::testing {

inline SimDesign toy_design(std::uint64_t seed = 42, int populations = 3,
                            int years = 10) {
  SimDesign design;
  design.seed = seed;
  design.n_populations = populations;
  design.n_years = years;
  design.year_start = 2006;
  design.obs_per_source = {{SourceType::DHS, 3},
                           {SourceType::MICS, 2},
                           {SourceType::National, 2},
                           {SourceType::PMA, 3}};
  design.truth.source_scale = {0.19, 0.1, 0.015, 0.1};
  design.truth.char_scale = 0.1;
  design.truth.rho_pma = 0.8;
  design.char_fraction = 0.25;
  design.curve.rw2_sd = 0.01;
  return design;
}

inline Model toy_model(const SimDesign& design) {
  const SimResult sim = simulate_dataset(design);
  const auto cls = classify_possible_outliers(sim.obs, PreprocessConfig{});
  Dataset ds = build_dataset(sim.obs, design.indicator, cls);
  return Model(std::move(ds), make_process_model("rw2"), PriorConfig{});
}

}  // namespace nos::testing
