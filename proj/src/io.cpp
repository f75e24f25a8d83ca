#include "nos/io.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "nos/math.hpp"
#include "nos/version.hpp"

namespace nos {

namespace {

using nlohmann::json;

std::string hash_hex(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string canonical_hash(const json& j) { return hash_hex(fnv1a64(j.dump())); }

void require_keys(const json& j, std::initializer_list<const char*> allowed,
                  const std::string& context) {
  if (!j.is_object()) {
    throw std::runtime_error("config: " + context + " must be an object");
  }
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) {
      if (key == a) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw std::runtime_error("config: unknown key \"" + key + "\" in " + context);
    }
  }
}

void stamp(std::ostream& out, const std::string& config_hash) {
  out << "# nosfit " << kVersion << "\n";
  out << "# config_hash " << (config_hash.empty() ? "none" : config_hash) << "\n";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

/// Reads a CSV file: skips '#' comment lines, returns header + rows.
struct CsvFile {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvFile read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  CsvFile csv;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_csv_line(line);
    if (!have_header) {
      csv.header = std::move(fields);
      have_header = true;
    } else {
      if (fields.size() != csv.header.size()) {
        throw std::runtime_error("malformed CSV row in " + path + ": " + line);
      }
      csv.rows.push_back(std::move(fields));
    }
  }
  if (!have_header) throw std::runtime_error("empty CSV file: " + path);
  return csv;
}

int column(const CsvFile& csv, const std::string& name, const std::string& path) {
  for (std::size_t i = 0; i < csv.header.size(); ++i) {
    if (csv.header[i] == name) return static_cast<int>(i);
  }
  throw std::runtime_error("missing column \"" + name + "\" in " + path);
}

bool parse_bool(const std::string& s) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw std::runtime_error("invalid boolean value: " + s);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  return out;
}

}  // namespace

std::string format_full(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::string format_short(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", x);
  return buf;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  auto out = open_out(path);
  out << content;
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("config: invalid JSON: ") + e.what());
  }
  require_keys(j, {"data", "output_dir", "classification", "model", "preprocess", "sampler"},
               "top level");
  RunConfig cfg;
  if (!j.contains("data")) throw std::runtime_error("config: missing \"data\"");
  cfg.data_path = j.at("data").get<std::string>();
  cfg.output_dir = j.value("output_dir", cfg.output_dir);
  if (j.contains("classification")) {
    cfg.classification_path = j.at("classification").get<std::string>();
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    require_keys(m, {"indicator", "process_model", "year_start", "year_end", "priors"},
                 "model");
    if (m.contains("indicator")) {
      cfg.indicator = indicator_from_string(m.at("indicator").get<std::string>());
    }
    cfg.process_model = m.value("process_model", cfg.process_model);
    if (m.contains("year_start")) cfg.year_start = m.at("year_start").get<int>();
    if (m.contains("year_end")) cfg.year_end = m.at("year_end").get<int>();
    if (m.contains("priors")) {
      const json& p = m.at("priors");
      require_keys(p, {"source_sd", "char_sd", "tau_scale", "slab_sd"}, "model.priors");
      cfg.priors.source_sd = p.value("source_sd", cfg.priors.source_sd);
      cfg.priors.char_sd = p.value("char_sd", cfg.priors.char_sd);
      cfg.priors.tau_scale = p.value("tau_scale", cfg.priors.tau_scale);
      cfg.priors.slab_sd = p.value("slab_sd", cfg.priors.slab_sd);
    }
  }
  if (j.contains("preprocess")) {
    const json& p = j.at("preprocess");
    require_keys(p, {"top_fraction", "bandwidth", "flag_dhs_before_1990",
                     "non_outlying_overrides"},
                 "preprocess");
    cfg.preprocess.top_fraction = p.value("top_fraction", cfg.preprocess.top_fraction);
    cfg.preprocess.bandwidth = p.value("bandwidth", cfg.preprocess.bandwidth);
    cfg.preprocess.flag_dhs_before_1990 =
        p.value("flag_dhs_before_1990", cfg.preprocess.flag_dhs_before_1990);
    if (p.contains("non_outlying_overrides")) {
      cfg.preprocess.non_outlying_overrides =
          p.at("non_outlying_overrides").get<std::vector<std::int64_t>>();
    }
  }
  if (j.contains("sampler")) {
    const json& s = j.at("sampler");
    require_keys(s, {"chains", "warmup", "draws", "seed", "target_accept", "max_depth",
                     "parallel_chains"},
                 "sampler");
    cfg.sampler.chains = s.value("chains", cfg.sampler.chains);
    cfg.sampler.warmup = s.value("warmup", cfg.sampler.warmup);
    cfg.sampler.draws = s.value("draws", cfg.sampler.draws);
    cfg.sampler.seed = s.value("seed", cfg.sampler.seed);
    cfg.sampler.target_accept = s.value("target_accept", cfg.sampler.target_accept);
    cfg.sampler.max_depth = s.value("max_depth", cfg.sampler.max_depth);
    cfg.sampler.parallel_chains = s.value("parallel_chains", cfg.sampler.parallel_chains);
  }

  // Validation beyond types.
  if (!(cfg.preprocess.top_fraction >= 0.0 && cfg.preprocess.top_fraction < 1.0)) {
    throw std::runtime_error("config: top_fraction must lie in [0, 1)");
  }
  if (!(cfg.preprocess.bandwidth > 0.0)) {
    throw std::runtime_error("config: bandwidth must be positive");
  }
  if (cfg.year_start && cfg.year_end && *cfg.year_end < *cfg.year_start) {
    throw std::runtime_error("config: year_end before year_start");
  }
  cfg.config_hash = canonical_hash(j);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(read_text_file(path));
}

SimDesign parse_sim_design(const std::string& json_text, std::string* hash) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("design: invalid JSON: ") + e.what());
  }
  require_keys(j, {"seed", "replicates", "populations", "years", "year_start",
                   "indicator", "population_prefix", "observations", "years_by_source",
                   "n_eff", "char_fraction", "curve", "explicit_eta", "truth",
                   "injections"},
               "design");
  SimDesign d;
  d.seed = j.value("seed", d.seed);
  d.replicates = j.value("replicates", d.replicates);
  d.n_populations = j.value("populations", d.n_populations);
  d.n_years = j.value("years", d.n_years);
  d.year_start = j.value("year_start", d.year_start);
  if (j.contains("indicator")) {
    d.indicator = indicator_from_string(j.at("indicator").get<std::string>());
  }
  d.population_prefix = j.value("population_prefix", d.population_prefix);
  if (j.contains("observations")) {
    for (const auto& [key, val] : j.at("observations").items()) {
      d.obs_per_source[source_type_from_string(key)] = val.get<int>();
    }
  }
  if (j.contains("years_by_source")) {
    for (const auto& [key, val] : j.at("years_by_source").items()) {
      d.years_by_source[source_type_from_string(key)] = val.get<std::vector<int>>();
    }
  }
  if (j.contains("n_eff")) {
    const json& n = j.at("n_eff");
    require_keys(n, {"min", "max"}, "design.n_eff");
    d.n_eff_min = n.value("min", d.n_eff_min);
    d.n_eff_max = n.value("max", d.n_eff_max);
  }
  d.char_fraction = j.value("char_fraction", d.char_fraction);
  if (j.contains("curve")) {
    const json& c = j.at("curve");
    require_keys(c, {"intercept_mean", "intercept_sd", "slope_mean", "slope_sd", "rw2_sd"},
                 "design.curve");
    d.curve.intercept_mean = c.value("intercept_mean", d.curve.intercept_mean);
    d.curve.intercept_sd = c.value("intercept_sd", d.curve.intercept_sd);
    d.curve.slope_mean = c.value("slope_mean", d.curve.slope_mean);
    d.curve.slope_sd = c.value("slope_sd", d.curve.slope_sd);
    d.curve.rw2_sd = c.value("rw2_sd", d.curve.rw2_sd);
  }
  if (j.contains("explicit_eta")) {
    const auto rows = j.at("explicit_eta").get<std::vector<std::vector<double>>>();
    Eigen::MatrixXd eta(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (static_cast<int>(rows[r].size()) != eta.cols()) {
        throw std::runtime_error("design: ragged explicit_eta");
      }
      for (std::size_t c = 0; c < rows[r].size(); ++c) eta(r, c) = rows[r][c];
    }
    d.explicit_eta = eta;
  }
  if (j.contains("truth")) {
    const json& t = j.at("truth");
    require_keys(t, {"sigma_source", "char_scale", "tau", "slab", "rho_pma"},
                 "design.truth");
    if (t.contains("sigma_source")) {
      for (const auto& [key, val] : t.at("sigma_source").items()) {
        const int idx = source_scale_index(source_type_from_string(key));
        if (idx < 0) throw std::runtime_error("design: DHS has no source scale");
        d.truth.source_scale[idx] = val.get<double>();
      }
    }
    d.truth.char_scale = t.value("char_scale", d.truth.char_scale);
    d.truth.tau = t.value("tau", d.truth.tau);
    d.truth.slab = t.value("slab", d.truth.slab);
    d.truth.rho_pma = t.value("rho_pma", d.truth.rho_pma);
  }
  if (j.contains("injections")) {
    for (const json& e : j.at("injections")) {
      require_keys(e, {"population", "year", "source", "shift"}, "design.injections[]");
      SimInjection inj;
      inj.population = e.at("population").get<std::string>();
      inj.year = e.at("year").get<int>();
      inj.source = source_type_from_string(e.at("source").get<std::string>());
      inj.shift = e.at("shift").get<double>();
      d.injections.push_back(inj);
    }
  }
  const std::string err = validate_sim_design(d);
  if (!err.empty()) throw std::runtime_error("design: " + err);
  if (hash) *hash = canonical_hash(j);
  return d;
}

SimDesign load_sim_design(const std::string& path, std::string* hash) {
  return parse_sim_design(read_text_file(path), hash);
}

std::vector<Observation> read_observations_csv(const std::string& path) {
  const CsvFile csv = read_csv(path);
  const int c_id = column(csv, "id", path);
  const int c_pop = column(csv, "population", path);
  const int c_year = column(csv, "year", path);
  const int c_ind = column(csv, "indicator", path);
  const int c_val = column(csv, "value", path);
  const int c_se = column(csv, "se_proportion", path);
  const int c_neff = column(csv, "n_eff", path);
  const int c_src = column(csv, "source_type", path);
  const int c_char = column(csv, "char_mismatch", path);
  const int c_doc = column(csv, "documented_concern", path);
  const int c_pma = column(csv, "pma_series_id", path);

  if (csv.rows.empty()) throw std::runtime_error("no observation rows in " + path);

  std::vector<Observation> obs;
  std::vector<std::string> problems;
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    try {
      Observation o;
      o.id = std::stoll(row[c_id]);
      o.population = row[c_pop];
      o.year = std::stoi(row[c_year]);
      o.indicator = indicator_from_string(row[c_ind]);
      o.value = std::stod(row[c_val]);
      if (!row[c_se].empty()) {
        const double se = std::stod(row[c_se]);
        o.sampling_variance = se * se;
      }
      if (!row[c_neff].empty()) o.effective_sample_size = std::stod(row[c_neff]);
      o.source_type = source_type_from_string(row[c_src]);
      o.char_mismatch = parse_bool(row[c_char]);
      o.documented_concern = parse_bool(row[c_doc]);
      if (!row[c_pma].empty()) o.pma_series_id = row[c_pma];
      const std::string err = validate_observation(o);
      if (!err.empty()) throw std::runtime_error(err);
      obs.push_back(std::move(o));
    } catch (const std::exception& e) {
      std::ostringstream m;
      m << "row " << r + 2 << ": " << e.what();
      problems.push_back(m.str());
    }
  }
  if (!problems.empty()) {
    std::ostringstream m;
    m << "invalid rows in " << path << ":";
    for (const auto& p : problems) m << "\n  " << p;
    throw std::runtime_error(m.str());
  }
  return obs;
}

void write_observations_csv(const std::string& path, std::span<const Observation> obs,
                            const std::string& config_hash) {
  auto out = open_out(path);
  stamp(out, config_hash);
  out << "id,population,year,indicator,value,se_proportion,n_eff,source_type,"
         "char_mismatch,documented_concern,pma_series_id\n";
  for (const auto& o : obs) {
    out << o.id << ',' << o.population << ',' << o.year << ',' << to_string(o.indicator)
        << ',' << format_full(o.value) << ',';
    if (o.sampling_variance) out << format_full(std::sqrt(*o.sampling_variance));
    out << ',';
    if (o.effective_sample_size) out << format_full(*o.effective_sample_size);
    out << ',' << to_string(o.source_type) << ',' << (o.char_mismatch ? 1 : 0) << ','
        << (o.documented_concern ? 1 : 0) << ',';
    if (o.pma_series_id) out << *o.pma_series_id;
    out << '\n';
  }
}

void write_classification_csv(const std::string& path,
                              std::span<const Observation> obs,
                              const OutlierClassification& cls,
                              const std::string& config_hash) {
  auto out = open_out(path);
  stamp(out, config_hash);
  out << "id,possibly_outlying,reference_source,flag_step\n";
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const auto& ref = cls.reference_source.at(obs[i].population);
    out << obs[i].id << ',' << (cls.possibly_outlying[i] ? 1 : 0) << ','
        << (ref ? to_string(*ref) : "") << ',' << to_string(cls.flag_step[i]) << '\n';
  }
}

std::vector<ClassificationRow> read_classification_csv(const std::string& path) {
  const CsvFile csv = read_csv(path);
  const int c_id = column(csv, "id", path);
  const int c_out = column(csv, "possibly_outlying", path);
  const int c_ref = column(csv, "reference_source", path);
  const int c_step = column(csv, "flag_step", path);
  std::vector<ClassificationRow> rows;
  for (const auto& r : csv.rows) {
    ClassificationRow row;
    row.id = std::stoll(r[c_id]);
    row.possibly_outlying = parse_bool(r[c_out]);
    row.reference_source = r[c_ref];
    row.flag_step = r[c_step];
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_truth_csv(const std::string& path, const LatentGrid& truth,
                     const std::string& config_hash) {
  auto out = open_out(path);
  stamp(out, config_hash);
  out << "population,year,eta_true,phi_true\n";
  for (int c = 0; c < truth.spec.n_populations(); ++c) {
    for (int t = 0; t < truth.spec.n_years; ++t) {
      out << truth.spec.populations[c] << ',' << truth.spec.year_start + t << ','
          << format_full(truth.eta(c, t)) << ',' << format_full(inv_logit(truth.eta(c, t)))
          << '\n';
    }
  }
}

void write_draws_csv(const std::string& path, const PosteriorDraws& draws, int chain,
                     const std::string& config_hash) {
  auto out = open_out(path);
  stamp(out, config_hash);
  out << "lp__,divergent__,tree_depth__";
  for (const auto& n : draws.names) out << ',' << n;
  out << '\n';
  const auto& m = draws.chains[chain];
  for (int d = 0; d < m.rows(); ++d) {
    out << format_full(draws.lp[chain][d]) << ','
        << static_cast<int>(draws.divergent[chain][d]) << ','
        << draws.tree_depth[chain][d];
    for (int p = 0; p < m.cols(); ++p) out << ',' << format_full(m(d, p));
    out << '\n';
  }
}

PosteriorDraws read_draws_csv(const std::vector<std::string>& chain_paths) {
  PosteriorDraws draws;
  for (const auto& path : chain_paths) {
    const CsvFile csv = read_csv(path);
    if (csv.header.size() < 4 || csv.header[0] != "lp__") {
      throw std::runtime_error("not a draws file: " + path);
    }
    std::vector<std::string> names(csv.header.begin() + 3, csv.header.end());
    if (draws.names.empty()) {
      draws.names = names;
    } else if (draws.names != names) {
      throw std::runtime_error("draws files disagree on parameters: " + path);
    }
    const int n = static_cast<int>(csv.rows.size());
    const int p = static_cast<int>(names.size());
    Eigen::MatrixXd m(n, p);
    Eigen::VectorXd lp(n);
    std::vector<int> depth(n);
    std::vector<std::uint8_t> div(n);
    for (int r = 0; r < n; ++r) {
      lp[r] = std::stod(csv.rows[r][0]);
      div[r] = static_cast<std::uint8_t>(std::stoi(csv.rows[r][1]));
      depth[r] = std::stoi(csv.rows[r][2]);
      for (int c = 0; c < p; ++c) m(r, c) = std::stod(csv.rows[r][c + 3]);
    }
    draws.chains.push_back(std::move(m));
    draws.lp.push_back(std::move(lp));
    draws.tree_depth.push_back(std::move(depth));
    draws.divergent.push_back(std::move(div));
    draws.step_size.push_back(0.0);
  }
  return draws;
}

void write_summary_csv(const std::string& path, const SummaryTable& table,
                       const std::string& config_hash) {
  auto out = open_out(path);
  stamp(out, config_hash);
  out << "parameter,mean,median";
  for (double q : table.probs) out << ",q" << format_short(100.0 * q);
  out << '\n';
  for (std::size_t r = 0; r < table.names.size(); ++r) {
    out << table.names[r] << ',' << format_short(table.means[r]) << ','
        << format_short(table.medians[r]);
    for (double q : table.quantiles[r]) out << ',' << format_short(q);
    out << '\n';
  }
}

void write_diagnostics_csv(const std::string& path,
                           const std::vector<std::string>& names,
                           const std::vector<ParamDiagnostic>& diags,
                           const std::string& config_hash) {
  auto out = open_out(path);
  stamp(out, config_hash);
  out << "parameter,rhat,ess,degenerate\n";
  for (std::size_t i = 0; i < names.size(); ++i) {
    out << names[i] << ',';
    if (diags[i].degenerate) {
      out << ",,1\n";
    } else {
      out << format_short(diags[i].rhat) << ',' << format_short(diags[i].ess) << ",0\n";
    }
  }
}

}  // namespace nos
