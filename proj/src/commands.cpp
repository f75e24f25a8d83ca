#include "nos/commands.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "nos/math.hpp"
#include "nos/model.hpp"
#include "nos/sim.hpp"
#include "nos/version.hpp"

namespace nos {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<Observation> filter_by_indicator(const std::vector<Observation>& all,
                                             Indicator indicator) {
  std::vector<Observation> out;
  for (const auto& o : all) {
    if (o.indicator == indicator) out.push_back(o);
  }
  return out;
}

/// Loads observations and the outlier classification (from file when
/// configured, otherwise computed inline).
struct LoadedData {
  std::vector<Observation> obs;  // selected indicator only
  OutlierClassification cls;
};

LoadedData load_data(const RunConfig& config) {
  LoadedData data;
  const auto all = read_observations_csv(config.data_path);
  data.obs = filter_by_indicator(all, config.indicator);
  if (data.obs.empty()) {
    throw std::runtime_error("no observations for indicator " +
                             std::string(to_string(config.indicator)));
  }
  if (config.classification_path) {
    const auto rows = read_classification_csv(*config.classification_path);
    std::map<std::int64_t, ClassificationRow> by_id;
    for (const auto& r : rows) by_id[r.id] = r;
    data.cls.possibly_outlying.resize(data.obs.size());
    data.cls.flag_step.assign(data.obs.size(), FlagStep::None);
    for (std::size_t i = 0; i < data.obs.size(); ++i) {
      const auto it = by_id.find(data.obs[i].id);
      if (it == by_id.end()) {
        throw std::runtime_error("classification file lacks observation id " +
                                 std::to_string(data.obs[i].id));
      }
      data.cls.possibly_outlying[i] = it->second.possibly_outlying;
      auto& ref = data.cls.reference_source[data.obs[i].population];
      if (!it->second.reference_source.empty()) {
        ref = source_type_from_string(it->second.reference_source);
      }
    }
  } else {
    data.cls = classify_possible_outliers(data.obs, config.preprocess);
  }
  return data;
}

Model build_model(const RunConfig& config, const LoadedData& data) {
  Dataset ds = build_dataset(data.obs, config.indicator, data.cls, config.year_start,
                             config.year_end);
  std::shared_ptr<const ProcessModel> process = make_process_model(config.process_model);
  return Model(std::move(ds), std::move(process), config.priors);
}

void append_summary_row(SummaryTable& table, const std::string& name,
                        std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  table.names.push_back(name);
  table.means.push_back(s / static_cast<double>(values.size()));
  table.medians.push_back(quantile(values, 0.5));
  std::vector<double> qs;
  for (double q : table.probs) qs.push_back(quantile(values, q));
  table.quantiles.push_back(std::move(qs));
}

/// Posterior draws of each observation's total error sd, appended to the
/// summary so plotted observation intervals can reflect total error.
void append_obs_total_sd(SummaryTable& table, const Dataset& ds,
                         const PosteriorDraws& draws) {
  std::array<int, kNumSourceScales> src_col{};
  for (int s = 0; s < kNumSourceScales; ++s) {
    src_col[s] = draws.param_index(std::string("sigma_source[") +
                                   to_string(kScaledSources[s]) + "]");
  }
  const int char_col = draws.param_index("sigma_char");
  const int tau_col = draws.param_index("tau");
  const int slab_col = draws.param_index("slab");
  std::vector<int> gamma_col(ds.structure.n_outliers());
  for (int k = 0; k < ds.structure.n_outliers(); ++k) {
    gamma_col[k] = draws.param_index("gamma[" +
                                     std::to_string(ds.structure.outlier_ids[k]) + "]");
  }
  const int total = draws.n_chains() * draws.n_draws();
  for (int i = 0; i < ds.n_obs(); ++i) {
    std::vector<double> sd(total);
    int at = 0;
    for (int c = 0; c < draws.n_chains(); ++c) {
      const auto& m = draws.chains[c];
      for (int d = 0; d < draws.n_draws(); ++d, ++at) {
        double v = ds.structure.logit_var[i];
        if (ds.structure.in_source[i]) {
          const double s = m(d, src_col[source_scale_index(ds.obs[i].source_type)]);
          v += s * s;
        }
        if (ds.structure.in_char[i]) {
          const double s = m(d, char_col);
          v += s * s;
        }
        if (ds.structure.outlier_slot[i] >= 0) {
          const double hs = horseshoe_scale(m(d, tau_col), m(d, slab_col),
                                            m(d, gamma_col[ds.structure.outlier_slot[i]]));
          v += hs * hs;
        }
        sd[at] = std::sqrt(v);
      }
    }
    append_summary_row(table, "obs_total_sd[" + std::to_string(ds.obs[i].id) + "]",
                       std::move(sd));
  }
}

std::string draws_path(const std::string& dir, int chain) {
  return dir + "/draws_chain" + std::to_string(chain + 1) + ".csv";
}

struct GateResult {
  double max_rhat = 0.0;
  double min_ess = 0.0;
  double divergence_rate = 0.0;
  bool rhat_ok = true, divergence_ok = true;
};

GateResult evaluate_gates(const PosteriorDraws& draws,
                          const std::vector<ParamDiagnostic>& diags) {
  GateResult g;
  g.min_ess = std::numeric_limits<double>::infinity();
  bool any = false;
  for (const auto& d : diags) {
    if (d.degenerate) continue;
    any = true;
    g.max_rhat = std::max(g.max_rhat, d.rhat);
    g.min_ess = std::min(g.min_ess, d.ess);
  }
  if (!any) g.min_ess = 0.0;
  g.divergence_rate = draws.divergence_rate();
  g.rhat_ok = g.max_rhat <= 1.05;
  g.divergence_ok = g.divergence_rate <= 0.10;
  return g;
}

}  // namespace

int cmd_preprocess(const RunConfig& config, std::ostream& log) {
  const auto all = read_observations_csv(config.data_path);
  const auto obs = filter_by_indicator(all, config.indicator);
  if (obs.empty()) {
    throw std::runtime_error("no observations for indicator " +
                             std::string(to_string(config.indicator)));
  }
  const auto cls = classify_possible_outliers(obs, config.preprocess);

  fs::create_directories(config.output_dir);
  write_classification_csv(config.output_dir + "/classification.csv", obs, cls,
                           config.config_hash);

  std::ostringstream report;
  report << "nosfit " << kVersion << " preprocess report\n";
  report << "config_hash " << config.config_hash << "\n\n";
  for (const auto& [pop, ref] : cls.reference_source) {
    int n = 0, s1 = 0, s2 = 0, s3 = 0, ov = 0, flagged = 0;
    for (std::size_t i = 0; i < obs.size(); ++i) {
      if (obs[i].population != pop) continue;
      ++n;
      flagged += cls.possibly_outlying[i] ? 1 : 0;
      switch (cls.flag_step[i]) {
        case FlagStep::Documented: ++s1; break;
        case FlagStep::NonReference: ++s2; break;
        case FlagStep::Trend: ++s3; break;
        case FlagStep::Override: ++ov; break;
        case FlagStep::None: break;
      }
    }
    report << "population " << pop << ": reference="
           << (ref ? to_string(*ref) : "none") << " observations=" << n
           << " step1=" << s1 << " step2=" << s2 << " step3=" << s3
           << " overrides=" << ov << " possibly_outlying=" << flagged << "\n";
  }
  write_text_file(config.output_dir + "/preprocess_log.txt", report.str());
  log << "wrote " << config.output_dir << "/classification.csv ("
      << obs.size() << " observations)\n";
  return 0;
}

int cmd_fit(const RunConfig& config, std::ostream& log) {
  if (config.sampler.chains < 2) {
    throw std::runtime_error("fit: diagnostics need at least 2 chains");
  }
  const LoadedData data = load_data(config);
  const Model model = build_model(config, data);
  log << "model: " << model.data().grid.n_populations() << " populations, "
      << model.data().grid.n_years << " years, " << model.data().n_obs()
      << " observations, " << model.dim() << " parameters\n";

  const PosteriorDraws draws = sample(model, config.sampler);
  const auto diags = diagnostics(draws);
  const GateResult gates = evaluate_gates(draws, diags);

  SummaryTable table = summarize(draws);
  append_obs_total_sd(table, model.data(), draws);

  fs::create_directories(config.output_dir);
  for (int c = 0; c < draws.n_chains(); ++c) {
    write_draws_csv(draws_path(config.output_dir, c), draws, c, config.config_hash);
  }
  write_summary_csv(config.output_dir + "/summary.csv", table, config.config_hash);
  write_diagnostics_csv(config.output_dir + "/diagnostics.csv", draws.names, diags,
                        config.config_hash);

  json meta;
  meta["version"] = kVersion;
  meta["config_hash"] = config.config_hash;
  meta["seed"] = config.sampler.seed;
  meta["chains"] = config.sampler.chains;
  meta["warmup"] = config.sampler.warmup;
  meta["draws"] = config.sampler.draws;
  meta["step_size"] = draws.step_size;
  meta["divergence_rate"] = gates.divergence_rate;
  meta["max_rhat"] = gates.max_rhat;
  meta["min_ess"] = gates.min_ess;
  meta["quality_ok"] = gates.rhat_ok && gates.divergence_ok;
  write_text_file(config.output_dir + "/metadata.json", meta.dump(2) + "\n");

  log << "divergence rate " << format_short(gates.divergence_rate) << ", max rhat "
      << format_short(gates.max_rhat) << ", min ess " << format_short(gates.min_ess)
      << "\n";
  if (!gates.rhat_ok) log << "QUALITY FAILURE: rhat above 1.05\n";
  if (!gates.divergence_ok) log << "QUALITY FAILURE: divergence rate above 10%\n";
  return gates.rhat_ok && gates.divergence_ok ? 0 : 2;
}

int cmd_simulate(const std::string& design_path, const std::string& output_dir,
                 std::ostream& log) {
  std::string hash;
  const SimDesign design = load_sim_design(design_path, &hash);
  fs::create_directories(output_dir);
  for (int rep = 0; rep < design.replicates; ++rep) {
    const SimResult result = simulate_dataset(design, rep);
    char suffix[16];
    std::snprintf(suffix, sizeof(suffix), "%03d", rep + 1);
    write_observations_csv(output_dir + "/obs_" + suffix + ".csv", result.obs, hash);
    write_truth_csv(output_dir + "/truth_" + suffix + ".csv", result.truth, hash);
  }
  json truth;
  truth["version"] = kVersion;
  truth["config_hash"] = hash;
  for (int s = 0; s < kNumSourceScales; ++s) {
    truth["sigma_source"][to_string(kScaledSources[s])] = design.truth.source_scale[s];
  }
  truth["char_scale"] = design.truth.char_scale;
  truth["tau"] = design.truth.tau;
  truth["slab"] = design.truth.slab;
  truth["rho_pma"] = design.truth.rho_pma;
  write_text_file(output_dir + "/truth_params.json", truth.dump(2) + "\n");
  log << "wrote " << design.replicates << " dataset(s) under " << output_dir << "\n";
  return 0;
}

int cmd_summarize(const RunConfig& config, std::ostream& log) {
  std::vector<std::string> paths;
  for (int c = 0;; ++c) {
    const std::string p = draws_path(config.output_dir, c);
    if (!fs::exists(p)) break;
    paths.push_back(p);
  }
  if (paths.empty()) {
    throw std::runtime_error("no draws files under " + config.output_dir);
  }
  const PosteriorDraws draws = read_draws_csv(paths);
  const LoadedData data = load_data(config);
  const Model model = build_model(config, data);
  SummaryTable table = summarize(draws);
  append_obs_total_sd(table, model.data(), draws);
  write_summary_csv(config.output_dir + "/summary.csv", table, config.config_hash);
  log << "wrote " << config.output_dir << "/summary.csv from " << paths.size()
      << " chain file(s)\n";
  return 0;
}

int cmd_check(const CheckOptions& options, std::ostream& out) {
  bool all_ok = true;
  out << "nosfit " << kVersion << " self-check\n";

  {  // Transform round-trips.
    Rng rng(options.seed);
    double max_err = 0.0;
    for (int i = 0; i < 20000; ++i) {
      const double p = i < 10000 ? rng.uniform(1e-6, 1.0 - 1e-6)
                                 : std::exp(rng.uniform(std::log(1e-6), std::log(0.5)));
      max_err = std::max(max_err, std::abs(inv_logit(logit(p)) - p));
    }
    const bool ok = max_err < 1e-12;
    all_ok = all_ok && ok;
    out << "check transform_roundtrip: " << (ok ? "PASS" : "FAIL")
        << " (max abs error " << format_short(max_err) << ")\n";
  }

  {  // Horseshoe limit laws.
    double worst = 0.0;
    bool ok = horseshoe_scale(0.04, 1.0, 0.0) == 0.0;
    Rng rng(options.seed + 1);
    for (int i = 0; i < 1000; ++i) {
      const double tau = rng.uniform(0.001, 0.5);
      const double slab = rng.uniform(0.2, 2.0);
      const double big = 1e6 * slab / tau;
      const double near = std::abs(horseshoe_scale(tau, slab, big) - slab) / slab;
      const double mid =
          std::abs(horseshoe_scale(tau, slab, slab / tau) - slab / std::sqrt(2.0));
      worst = std::max({worst, near / 1e-6, mid / 1e-12});
      ok = ok && near <= 1e-6 && mid <= 1e-12;
    }
    all_ok = all_ok && ok;
    out << "check horseshoe_limits: " << (ok ? "PASS" : "FAIL")
        << " (worst tolerance ratio " << format_short(worst) << ")\n";
  }

  {  // Dense-oracle likelihood equivalence.
    Rng rng(options.seed + 2);
    double max_rel = 0.0;
    for (int k = 0; k < options.instances; ++k) {
      const RandomInstance inst = random_instance(rng);
      const double fast = data_log_density(inst.data, inst.eta, inst.params);
      const int n = inst.data.n_obs();
      Eigen::VectorXd z(n), mu(n);
      Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(n, n);
      for (int i = 0; i < n; ++i) {
        z[i] = inst.data.z[i];
        mu[i] = inst.eta(inst.data.pop_of[i], inst.data.tix_of[i]);
        const double sd = total_error_sd(inst.data, i, inst.params);
        cov(i, i) = sd * sd;
      }
      for (const auto& block : inst.data.structure.pma_blocks) {
        const Eigen::MatrixXd bc = build_covariance(inst.data, block, inst.params);
        for (std::size_t a = 0; a < block.size(); ++a) {
          for (std::size_t b = 0; b < block.size(); ++b) {
            cov(block[a], block[b]) = bc(a, b);
          }
        }
      }
      const double dense = dense_normal_logpdf(z, mu, cov);
      max_rel = std::max(max_rel, std::abs(fast - dense) / std::abs(dense));
    }
    const bool ok = max_rel <= 1e-10;
    all_ok = all_ok && ok;
    out << "check dense_likelihood_equivalence: " << (ok ? "PASS" : "FAIL") << " ("
        << options.instances << " instances, max rel error " << format_short(max_rel)
        << ")\n";
  }

  {  // Gradient vs central finite differences on a small model.
    SimDesign design;
    design.seed = options.seed + 3;
    design.n_populations = 3;
    design.n_years = 10;
    design.year_start = 2006;
    design.obs_per_source = {{SourceType::DHS, 3},
                             {SourceType::MICS, 2},
                             {SourceType::National, 2},
                             {SourceType::PMA, 3}};
    design.truth.source_scale = {0.19, 0.1, 0.015, 0.1};
    design.truth.char_scale = 0.1;
    design.truth.rho_pma = 0.8;
    design.char_fraction = 0.3;
    const SimResult sim = simulate_dataset(design);
    PreprocessConfig pre;
    const auto cls = classify_possible_outliers(sim.obs, pre);
    Dataset ds = build_dataset(sim.obs, design.indicator, cls);
    const Model model(std::move(ds), make_process_model("rw2"), PriorConfig{});

    Rng rng(options.seed + 4);
    double worst_ratio = 0.0;
    int worst_coord = -1;
    Eigen::VectorXd grad(model.dim());
    for (int k = 0; k < options.gradient_points; ++k) {
      const Eigen::VectorXd v = model.init_point(rng);
      model.log_density_grad(v, grad);
      if (k == 0 && options.perturb_coordinate >= 0 &&
          options.perturb_coordinate < model.dim()) {
        grad[options.perturb_coordinate] += options.perturb_eps;
      }
      const Eigen::VectorXd fd = finite_difference_gradient(
          [&](const Eigen::VectorXd& x) { return model.log_density(x); }, v, 1e-5);
      for (int i = 0; i < model.dim(); ++i) {
        const double allowed = std::max(1e-7, 1e-5 * std::abs(fd[i]));
        const double ratio = std::abs(grad[i] - fd[i]) / allowed;
        if (ratio > worst_ratio) {
          worst_ratio = ratio;
          worst_coord = i;
        }
      }
    }
    const bool ok = worst_ratio <= 1.0;
    all_ok = all_ok && ok;
    out << "check gradient_vs_finite_differences: " << (ok ? "PASS" : "FAIL")
        << " (worst tolerance ratio " << format_short(worst_ratio) << " at coordinate "
        << worst_coord;
    if (worst_coord >= 0) out << " [" << model.layout().names[worst_coord] << "]";
    out << ")\n";
  }

  out << (all_ok ? "all checks passed\n" : "CHECK FAILURES PRESENT\n");
  return all_ok ? 0 : 1;
}

}  // namespace nos
