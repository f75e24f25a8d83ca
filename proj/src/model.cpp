#include "nos/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "nos/math.hpp"

namespace nos {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double sq(double x) { return x * x; }

/// Gradient sink for parameters shared across populations. The parallel
/// kernel gives each population its own copy and merges them in index
/// order afterwards.
struct SharedGrads {
  double lp = 0.0;
  std::array<double, kNumSourceScales> src{};
  double chr = 0.0, tau = 0.0, slab = 0.0, rho = 0.0;
  bool failed = false;

  void merge(const SharedGrads& o) {
    lp += o.lp;
    for (int s = 0; s < kNumSourceScales; ++s) src[s] += o.src[s];
    chr += o.chr;
    tau += o.tau;
    slab += o.slab;
    rho += o.rho;
    failed = failed || o.failed;
  }
};

double obs_variance(const Dataset& d, const DataModelParams& dm, int i) {
  const auto& st = d.structure;
  double v = st.logit_var[i];
  if (st.in_source[i]) v += sq(dm.source(d.obs[i].source_type));
  if (st.in_char[i]) v += sq(dm.char_scale);
  if (st.outlier_slot[i] >= 0) {
    v += sq(horseshoe_scale(dm.tau, dm.slab, dm.local_scale[st.outlier_slot[i]]));
  }
  return v;
}

/// Adds dlp/dV times dV/d(parameter) for every inferred variance component
/// of observation i. The horseshoe partials use w = slab^2/(slab^2 +
/// tau^2 gamma^2) and q = 1 - w, both computed overflow-safely.
void add_variance_partials(const Dataset& d, const DataModelParams& dm, int i,
                           double dV, SharedGrads& sg, double* ggamma) {
  const auto& st = d.structure;
  if (st.in_source[i]) {
    const int s = source_scale_index(d.obs[i].source_type);
    sg.src[s] += dV * 2.0 * dm.source_scale[s];
  }
  if (st.in_char[i]) sg.chr += dV * 2.0 * dm.char_scale;
  const int slot = st.outlier_slot[i];
  if (slot >= 0) {
    const double g = dm.local_scale[slot];
    const double r = dm.tau * g / dm.slab;
    const double r2 = r * r;
    double w, q;
    if (r <= 1.0) {
      w = 1.0 / (1.0 + r2);
      q = r2 / (1.0 + r2);
    } else {
      const double inv = 1.0 / r2;
      w = inv / (1.0 + inv);
      q = 1.0 / (1.0 + inv);
    }
    sg.tau += dV * 2.0 * dm.tau * sq(g * w);
    sg.slab += dV * 2.0 * dm.slab * sq(q);
    ggamma[slot] += dV * 2.0 * g * sq(dm.tau * w);
  }
}

double indep_obs_term(const Dataset& d, const Eigen::MatrixXd& eta,
                      const DataModelParams& dm, int i, Eigen::MatrixXd* geta,
                      SharedGrads* sg, double* ggamma) {
  const double V = obs_variance(d, dm, i);
  const double r = d.z[i] - eta(d.pop_of[i], d.tix_of[i]);
  const double lp = -0.5 * kLog2Pi - 0.5 * std::log(V) - 0.5 * r * r / V;
  if (geta) {
    (*geta)(d.pop_of[i], d.tix_of[i]) += r / V;
    const double dV = -0.5 / V + 0.5 * r * r / (V * V);
    add_variance_partials(d, dm, i, dV, *sg, ggamma);
  }
  return lp;
}

double block_term(const Dataset& d, const Eigen::MatrixXd& eta,
                  const DataModelParams& dm, const std::vector<int>& block,
                  Eigen::MatrixXd* geta, SharedGrads* sg, double* ggamma) {
  const int k = static_cast<int>(block.size());
  Eigen::VectorXd sd(k), resid(k);
  Eigen::MatrixXd corr(k, k), cov(k, k);
  for (int j = 0; j < k; ++j) {
    sd[j] = std::sqrt(obs_variance(d, dm, block[j]));
    resid[j] = d.z[block[j]] - eta(d.pop_of[block[j]], d.tix_of[block[j]]);
  }
  for (int j = 0; j < k; ++j) {
    corr(j, j) = 1.0;
    cov(j, j) = sd[j] * sd[j];
    for (int l = j + 1; l < k; ++l) {
      const int gap = d.obs[block[l]].year - d.obs[block[j]].year;
      const double rr = std::pow(dm.rho_pma, gap);
      corr(j, l) = rr;
      corr(l, j) = rr;
      cov(j, l) = sd[j] * sd[l] * rr;
      cov(l, j) = cov(j, l);
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    if (sg) sg->failed = true;
    return 0.0;
  }
  double logdet = 0.0;
  const Eigen::MatrixXd L = llt.matrixL();
  for (int j = 0; j < k; ++j) logdet += std::log(L(j, j));
  const Eigen::VectorXd alpha = llt.solve(resid);
  const double lp = -0.5 * k * kLog2Pi - logdet - 0.5 * resid.dot(alpha);
  if (geta) {
    const Eigen::MatrixXd sinv = llt.solve(Eigen::MatrixXd::Identity(k, k));
    const Eigen::MatrixXd G = 0.5 * (alpha * alpha.transpose() - sinv);
    for (int j = 0; j < k; ++j) {
      (*geta)(d.pop_of[block[j]], d.tix_of[block[j]]) += alpha[j];
      double dsd = 0.0;
      for (int l = 0; l < k; ++l) dsd += G(j, l) * corr(j, l) * sd[l];
      add_variance_partials(d, dm, block[j], (2.0 * dsd) / (2.0 * sd[j]), *sg, ggamma);
    }
    double grho = 0.0;
    for (int j = 0; j < k; ++j) {
      for (int l = j + 1; l < k; ++l) {
        const int gap = d.obs[block[l]].year - d.obs[block[j]].year;
        grho += 2.0 * G(j, l) * sd[j] * sd[l] * gap * std::pow(dm.rho_pma, gap - 1);
      }
    }
    sg->rho += grho;
  }
  return lp;
}

/// Log prior over the data-model scales with its constrained gradient.
double dm_prior_grad(const DataModelParams& dm, const PriorConfig& priors,
                     SharedGrads* sg, double* ggamma) {
  double lp = 0.0;
  for (int s = 0; s < kNumSourceScales; ++s) {
    lp += half_normal_logpdf(dm.source_scale[s], priors.source_sd);
    if (sg) sg->src[s] += -dm.source_scale[s] / sq(priors.source_sd);
  }
  lp += half_normal_logpdf(dm.char_scale, priors.char_sd);
  if (sg) sg->chr += -dm.char_scale / sq(priors.char_sd);
  lp += half_cauchy_logpdf(dm.tau, priors.tau_scale);
  if (sg) sg->tau += -2.0 * dm.tau / (sq(priors.tau_scale) + sq(dm.tau));
  lp += half_normal_logpdf(dm.slab, priors.slab_sd);
  if (sg) sg->slab += -dm.slab / sq(priors.slab_sd);
  for (std::size_t i = 0; i < dm.local_scale.size(); ++i) {
    const double g = dm.local_scale[i];
    lp += half_cauchy_logpdf(g, 1.0);
    if (ggamma) ggamma[i] += -2.0 * g / (1.0 + g * g);
  }
  return lp;  // rho ~ U(0,1): no contribution inside the support
}

}  // namespace

Model::Model(Dataset data, std::shared_ptr<const ProcessModel> process,
             PriorConfig priors)
    : data_(std::move(data)), process_(std::move(process)), priors_(priors) {
  const int C = data_.grid.n_populations();
  const int T = data_.grid.n_years;

  layout_.n_pop = C;
  layout_.n_years = T;
  layout_.process = process_->layout(data_.grid);
  layout_.eta_offset = 0;
  layout_.process_offset = C * T;
  layout_.n_process = layout_.process.size();
  layout_.source_offset = layout_.process_offset + layout_.n_process;
  layout_.char_offset = layout_.source_offset + kNumSourceScales;
  layout_.tau_offset = layout_.char_offset + 1;
  layout_.slab_offset = layout_.tau_offset + 1;
  layout_.gamma_offset = layout_.slab_offset + 1;
  layout_.n_gamma = data_.structure.n_outliers();
  layout_.rho_offset = layout_.gamma_offset + layout_.n_gamma;
  layout_.dim = layout_.rho_offset + 1;

  layout_.names.reserve(layout_.dim);
  layout_.transforms.reserve(layout_.dim);
  for (int c = 0; c < C; ++c) {
    for (int t = 0; t < T; ++t) {
      layout_.names.push_back("eta[" + data_.grid.populations[c] + ":" +
                              std::to_string(data_.grid.year_start + t) + "]");
      layout_.transforms.push_back(ParamTransform::Identity);
    }
  }
  for (int k = 0; k < layout_.n_process; ++k) {
    layout_.names.push_back(layout_.process.names[k]);
    layout_.transforms.push_back(layout_.process.transforms[k]);
  }
  for (SourceType st : kScaledSources) {
    layout_.names.push_back(std::string("sigma_source[") + to_string(st) + "]");
    layout_.transforms.push_back(ParamTransform::LogPositive);
  }
  layout_.names.push_back("sigma_char");
  layout_.transforms.push_back(ParamTransform::LogPositive);
  layout_.names.push_back("tau");
  layout_.transforms.push_back(ParamTransform::LogPositive);
  layout_.names.push_back("slab");
  layout_.transforms.push_back(ParamTransform::LogPositive);
  for (std::int64_t id : data_.structure.outlier_ids) {
    layout_.names.push_back("gamma[" + std::to_string(id) + "]");
    layout_.transforms.push_back(ParamTransform::LogPositive);
  }
  layout_.names.push_back("rho_pma");
  layout_.transforms.push_back(ParamTransform::LogitUnit);

  // An observation with zero sampling variance and no inferred error
  // component would make the likelihood degenerate.
  for (int i = 0; i < data_.n_obs(); ++i) {
    const auto& st = data_.structure;
    if (st.logit_var[i] == 0.0 && !st.in_source[i] && !st.in_char[i] &&
        st.outlier_slot[i] < 0) {
      std::ostringstream m;
      m << "observation id " << data_.obs[i].id
        << " has zero sampling variance and no inferred error component";
      throw std::invalid_argument(m.str());
    }
  }

  pop_mean_z_ = Eigen::VectorXd::Zero(C);
  Eigen::VectorXd wsum = Eigen::VectorXd::Zero(C);
  for (int i = 0; i < data_.n_obs(); ++i) {
    const double w = 1.0 / (data_.structure.logit_var[i] + 0.01);
    pop_mean_z_[data_.pop_of[i]] += w * data_.z[i];
    wsum[data_.pop_of[i]] += w;
  }
  for (int c = 0; c < C; ++c) {
    pop_mean_z_[c] = wsum[c] > 0.0 ? pop_mean_z_[c] / wsum[c] : 0.0;
  }
}

ConstrainedParams Model::constrain(const Eigen::VectorXd& pos) const {
  if (pos.size() != layout_.dim) {
    throw std::invalid_argument("constrain: dimension mismatch");
  }
  ConstrainedParams cp;
  cp.eta.resize(layout_.n_pop, layout_.n_years);
  for (int c = 0; c < layout_.n_pop; ++c) {
    for (int t = 0; t < layout_.n_years; ++t) {
      cp.eta(c, t) = pos[layout_.eta_index(c, t)];
    }
  }
  cp.process_params.resize(layout_.n_process);
  for (int k = 0; k < layout_.n_process; ++k) {
    const double u = pos[layout_.process_offset + k];
    switch (layout_.process.transforms[k]) {
      case ParamTransform::Identity: cp.process_params[k] = u; break;
      case ParamTransform::LogPositive: cp.process_params[k] = std::exp(u); break;
      case ParamTransform::LogitUnit: cp.process_params[k] = inv_logit(u); break;
    }
  }
  for (int s = 0; s < kNumSourceScales; ++s) {
    cp.dm.source_scale[s] = std::exp(pos[layout_.source_offset + s]);
  }
  cp.dm.char_scale = std::exp(pos[layout_.char_offset]);
  cp.dm.tau = std::exp(pos[layout_.tau_offset]);
  cp.dm.slab = std::exp(pos[layout_.slab_offset]);
  cp.dm.local_scale.resize(layout_.n_gamma);
  for (int k = 0; k < layout_.n_gamma; ++k) {
    cp.dm.local_scale[k] = std::exp(pos[layout_.gamma_offset + k]);
  }
  cp.dm.rho_pma = inv_logit(pos[layout_.rho_offset]);
  return cp;
}

std::pair<Eigen::VectorXd, double> Model::unconstrain(const ConstrainedParams& cp) const {
  Eigen::VectorXd pos(layout_.dim);
  for (int c = 0; c < layout_.n_pop; ++c) {
    for (int t = 0; t < layout_.n_years; ++t) {
      pos[layout_.eta_index(c, t)] = cp.eta(c, t);
    }
  }
  for (int k = 0; k < layout_.n_process; ++k) {
    const double v = cp.process_params[k];
    switch (layout_.process.transforms[k]) {
      case ParamTransform::Identity: pos[layout_.process_offset + k] = v; break;
      case ParamTransform::LogPositive:
        if (!(v > 0.0)) throw std::domain_error("unconstrain: nonpositive scale");
        pos[layout_.process_offset + k] = std::log(v);
        break;
      case ParamTransform::LogitUnit: pos[layout_.process_offset + k] = logit(v); break;
    }
  }
  auto put_log = [&](int at, double v) {
    if (!(v > 0.0)) throw std::domain_error("unconstrain: nonpositive scale");
    pos[at] = std::log(v);
  };
  for (int s = 0; s < kNumSourceScales; ++s) {
    put_log(layout_.source_offset + s, cp.dm.source_scale[s]);
  }
  put_log(layout_.char_offset, cp.dm.char_scale);
  put_log(layout_.tau_offset, cp.dm.tau);
  put_log(layout_.slab_offset, cp.dm.slab);
  if (static_cast<int>(cp.dm.local_scale.size()) != layout_.n_gamma) {
    throw std::invalid_argument("unconstrain: local scale count mismatch");
  }
  for (int k = 0; k < layout_.n_gamma; ++k) {
    put_log(layout_.gamma_offset + k, cp.dm.local_scale[k]);
  }
  pos[layout_.rho_offset] = logit(cp.dm.rho_pma);
  return {pos, log_jacobian(pos)};
}

double Model::log_jacobian(const Eigen::VectorXd& pos) const {
  double lj = 0.0;
  for (int k = 0; k < layout_.dim; ++k) {
    switch (layout_.transforms[k]) {
      case ParamTransform::Identity: break;
      case ParamTransform::LogPositive: lj += pos[k]; break;
      case ParamTransform::LogitUnit:
        lj += -softplus(pos[k]) - softplus(-pos[k]);
        break;
    }
  }
  return lj;
}

Eigen::VectorXd Model::constrain_draw(const Eigen::VectorXd& pos) const {
  const ConstrainedParams cp = constrain(pos);
  Eigen::VectorXd flat(layout_.dim);
  for (int c = 0; c < layout_.n_pop; ++c) {
    for (int t = 0; t < layout_.n_years; ++t) {
      flat[layout_.eta_index(c, t)] = cp.eta(c, t);
    }
  }
  flat.segment(layout_.process_offset, layout_.n_process) = cp.process_params;
  for (int s = 0; s < kNumSourceScales; ++s) {
    flat[layout_.source_offset + s] = cp.dm.source_scale[s];
  }
  flat[layout_.char_offset] = cp.dm.char_scale;
  flat[layout_.tau_offset] = cp.dm.tau;
  flat[layout_.slab_offset] = cp.dm.slab;
  for (int k = 0; k < layout_.n_gamma; ++k) {
    flat[layout_.gamma_offset + k] = cp.dm.local_scale[k];
  }
  flat[layout_.rho_offset] = cp.dm.rho_pma;
  return flat;
}

// Chains start near the per-population data means with moderate jitter;
// smoothing scales start at the top of their funnels.
Eigen::VectorXd Model::init_point(Rng& rng) const {
  Eigen::VectorXd pos(layout_.dim);
  for (int c = 0; c < layout_.n_pop; ++c) {
    for (int t = 0; t < layout_.n_years; ++t) {
      pos[layout_.eta_index(c, t)] = pop_mean_z_[c] + rng.uniform(-0.3, 0.3);
    }
  }
  for (int k = 0; k < layout_.n_process; ++k) {
    const auto& pl = layout_.process;
    const double center = pl.init_center_pop[k] >= 0 ? pop_mean_z_[pl.init_center_pop[k]] : 0.0;
    pos[layout_.process_offset + k] = center + rng.uniform(pl.init_lo[k], pl.init_hi[k]);
  }
  for (int s = 0; s < kNumSourceScales; ++s) {
    pos[layout_.source_offset + s] = rng.uniform(-3.0, -1.0);
  }
  pos[layout_.char_offset] = rng.uniform(-3.0, -1.0);
  pos[layout_.tau_offset] = rng.uniform(-5.0, -2.0);
  pos[layout_.slab_offset] = rng.uniform(-0.5, 0.5);
  for (int k = 0; k < layout_.n_gamma; ++k) {
    pos[layout_.gamma_offset + k] = rng.uniform(-1.0, 1.0);
  }
  pos[layout_.rho_offset] = rng.uniform(-1.5, 1.5);
  return pos;
}

double Model::eval(const Eigen::VectorXd& pos, Eigen::VectorXd* grad,
                   bool parallel) const {
  if (grad) grad->setZero(layout_.dim);
  if (!pos.allFinite()) return kNegInf;

  const ConstrainedParams cp = constrain(pos);
  bool finite = cp.process_params.allFinite() && std::isfinite(cp.dm.char_scale) &&
                std::isfinite(cp.dm.tau) && std::isfinite(cp.dm.slab);
  for (double s : cp.dm.source_scale) finite = finite && std::isfinite(s);
  for (double g : cp.dm.local_scale) finite = finite && std::isfinite(g);
  if (!finite || !(cp.dm.rho_pma > 0.0 && cp.dm.rho_pma < 1.0)) return kNegInf;

  const int C = layout_.n_pop;
  Eigen::MatrixXd geta;
  Eigen::VectorXd gproc, ggamma;
  if (grad) {
    geta.setZero(C, layout_.n_years);
    gproc.setZero(layout_.n_process);
    ggamma.setZero(std::max(layout_.n_gamma, 1));
  }
  Eigen::MatrixXd* geta_p = grad ? &geta : nullptr;
  double* ggamma_p = grad ? ggamma.data() : nullptr;

  SharedGrads shared;
  double data_lp = 0.0;
  if (parallel) {
    std::vector<SharedGrads> shards(C);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
      SharedGrads& sg = shards[c];
      for (int i : data_.indep_by_pop[c]) {
        sg.lp += indep_obs_term(data_, cp.eta, cp.dm, i, geta_p, &sg, ggamma_p);
      }
      for (int b : data_.blocks_by_pop[c]) {
        sg.lp += block_term(data_, cp.eta, cp.dm, data_.structure.pma_blocks[b],
                            geta_p, &sg, ggamma_p);
      }
    }
    for (int c = 0; c < C; ++c) shared.merge(shards[c]);
    data_lp = shared.lp;
  } else {
    for (int i : data_.structure.independent) {
      data_lp += indep_obs_term(data_, cp.eta, cp.dm, i, geta_p, &shared, ggamma_p);
    }
    for (const auto& block : data_.structure.pma_blocks) {
      data_lp += block_term(data_, cp.eta, cp.dm, block, geta_p, &shared, ggamma_p);
    }
  }
  if (shared.failed) {
    if (grad) grad->setZero();
    return kNegInf;
  }

  double lp = data_lp;
  lp += grad ? process_->log_prior_grad(data_.grid, cp.eta, cp.process_params,
                                        geta, gproc)
             : process_->log_prior(data_.grid, cp.eta, cp.process_params);
  lp += dm_prior_grad(cp.dm, priors_, grad ? &shared : nullptr, ggamma_p);
  lp += log_jacobian(pos);
  if (!std::isfinite(lp)) {
    if (grad) grad->setZero();
    return kNegInf;
  }
  if (!grad) return lp;

  // Map the constrained-scale gradient to the unconstrained scale.
  auto apply = [&](int at, double value, double gcon) {
    switch (layout_.transforms[at]) {
      case ParamTransform::Identity: (*grad)[at] = gcon; break;
      case ParamTransform::LogPositive: (*grad)[at] = value * gcon + 1.0; break;
      case ParamTransform::LogitUnit:
        (*grad)[at] = value * (1.0 - value) * gcon + (1.0 - 2.0 * value);
        break;
    }
  };
  for (int c = 0; c < C; ++c) {
    for (int t = 0; t < layout_.n_years; ++t) {
      (*grad)[layout_.eta_index(c, t)] = geta(c, t);
    }
  }
  for (int k = 0; k < layout_.n_process; ++k) {
    apply(layout_.process_offset + k, cp.process_params[k], gproc[k]);
  }
  for (int s = 0; s < kNumSourceScales; ++s) {
    apply(layout_.source_offset + s, cp.dm.source_scale[s], shared.src[s]);
  }
  apply(layout_.char_offset, cp.dm.char_scale, shared.chr);
  apply(layout_.tau_offset, cp.dm.tau, shared.tau);
  apply(layout_.slab_offset, cp.dm.slab, shared.slab);
  for (int k = 0; k < layout_.n_gamma; ++k) {
    apply(layout_.gamma_offset + k, cp.dm.local_scale[k], ggamma[k]);
  }
  apply(layout_.rho_offset, cp.dm.rho_pma, shared.rho);
  if (!grad->allFinite()) {
    grad->setZero();
    return kNegInf;
  }
  return lp;
}

double Model::log_density_grad(const Eigen::VectorXd& pos, Eigen::VectorXd& grad) const {
  return eval(pos, &grad, true);
}

double Model::log_density(const Eigen::VectorXd& pos) const {
  return eval(pos, nullptr, true);
}

double Model::log_density_grad_reference(const Eigen::VectorXd& pos,
                                         Eigen::VectorXd* grad) const {
  return eval(pos, grad, false);
}

}  // namespace nos
