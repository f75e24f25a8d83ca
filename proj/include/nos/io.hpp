#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nos/datamodel.hpp"
#include "nos/diagnostics.hpp"
#include "nos/domain.hpp"
#include "nos/preprocess.hpp"
#include "nos/sampler.hpp"
#include "nos/sim.hpp"

namespace nos {

/// One batch run: paths, model options, preprocessing options, and
/// sampler options, all defaulted. Parsed from JSON; unknown keys are
/// rejected so typos cannot silently fall back to defaults.
struct RunConfig {
  std::string data_path;
  std::string output_dir = "out";
  std::optional<std::string> classification_path;
  Indicator indicator = Indicator::PrimaryProportion;
  std::string process_model = "rw2";
  PriorConfig priors;
  std::optional<int> year_start, year_end;
  PreprocessConfig preprocess;
  SamplerConfig sampler;
  std::string config_hash;  // digest of the canonical config
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

SimDesign parse_sim_design(const std::string& json_text, std::string* hash = nullptr);
SimDesign load_sim_design(const std::string& path, std::string* hash = nullptr);

/// Exact round-trip float formatting for draws; shorter form for reports.
std::string format_full(double x);
std::string format_short(double x);

std::vector<Observation> read_observations_csv(const std::string& path);
void write_observations_csv(const std::string& path, std::span<const Observation> obs,
                            const std::string& config_hash);

struct ClassificationRow {
  std::int64_t id = 0;
  bool possibly_outlying = false;
  std::string reference_source;  // empty when absent
  std::string flag_step;
};
void write_classification_csv(const std::string& path,
                              std::span<const Observation> obs,
                              const OutlierClassification& cls,
                              const std::string& config_hash);
std::vector<ClassificationRow> read_classification_csv(const std::string& path);

void write_truth_csv(const std::string& path, const LatentGrid& truth,
                     const std::string& config_hash);

void write_draws_csv(const std::string& path, const PosteriorDraws& draws, int chain,
                     const std::string& config_hash);
/// Rebuilds a PosteriorDraws from per-chain files written by write_draws_csv.
PosteriorDraws read_draws_csv(const std::vector<std::string>& chain_paths);

void write_summary_csv(const std::string& path, const SummaryTable& table,
                       const std::string& config_hash);
void write_diagnostics_csv(const std::string& path,
                           const std::vector<std::string>& names,
                           const std::vector<ParamDiagnostic>& diags,
                           const std::string& config_hash);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace nos
