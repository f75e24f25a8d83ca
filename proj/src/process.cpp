#include "nos/process.hpp"

#include <map>
#include <stdexcept>

#include "nos/math.hpp"

namespace nos {

namespace {

constexpr double kDiffuseSd = 10.0;  // level and first-difference sd

class Rw2ProcessModel final : public ProcessModel {
 public:
  std::string name() const override { return "rw2"; }

  ProcessParamLayout layout(const GridSpec& grid) const override {
    ProcessParamLayout out;
    for (int c = 0; c < grid.n_populations(); ++c) {
      out.add("level[" + grid.populations[c] + "]", ParamTransform::Identity, c,
              -0.3, 0.3);
    }
    for (int c = 0; c < grid.n_populations(); ++c) {
      out.add("lambda[" + grid.populations[c] + "]", ParamTransform::LogPositive,
              -1, -1.0, 0.5);
    }
    out.add("lambda_scale", ParamTransform::LogPositive, -1, -1.0, 0.5);
    return out;
  }

  double log_prior(const GridSpec& grid, const Eigen::MatrixXd& eta,
                   const Eigen::VectorXd& params) const override {
    return eval(grid, eta, params, nullptr, nullptr);
  }

  double log_prior_grad(const GridSpec& grid, const Eigen::MatrixXd& eta,
                        const Eigen::VectorXd& params, Eigen::MatrixXd& grad_eta,
                        Eigen::VectorXd& grad_params) const override {
    return eval(grid, eta, params, &grad_eta, &grad_params);
  }

 private:
  static double eval(const GridSpec& grid, const Eigen::MatrixXd& eta,
                     const Eigen::VectorXd& params, Eigen::MatrixXd* grad_eta,
                     Eigen::VectorXd* grad_params) {
    const int C = grid.n_populations();
    const int T = grid.n_years;
    if (eta.rows() != C || eta.cols() != T || params.size() != 2 * C + 1) {
      throw std::invalid_argument("rw2 process: dimension mismatch");
    }
    const double scale = params[2 * C];
    double lp = 0.0;
    for (int c = 0; c < C; ++c) {
      const double level = params[c];
      const double lambda = params[C + c];

      const double r0 = eta(c, 0) - level;
      lp += normal_logpdf(eta(c, 0), level, kDiffuseSd);
      if (grad_eta) (*grad_eta)(c, 0) += -r0 / (kDiffuseSd * kDiffuseSd);
      if (grad_params) (*grad_params)[c] += r0 / (kDiffuseSd * kDiffuseSd);
      if (T >= 2) {
        const double d1 = eta(c, 1) - eta(c, 0);
        lp += normal_logpdf(d1, 0.0, kDiffuseSd);
        if (grad_eta) {
          (*grad_eta)(c, 1) += -d1 / (kDiffuseSd * kDiffuseSd);
          (*grad_eta)(c, 0) += d1 / (kDiffuseSd * kDiffuseSd);
        }
      }
      for (int t = 2; t < T; ++t) {
        const double d2 = eta(c, t) - 2.0 * eta(c, t - 1) + eta(c, t - 2);
        lp += normal_logpdf(d2, 0.0, lambda);
        if (grad_eta) {
          const double g = -d2 / (lambda * lambda);
          (*grad_eta)(c, t) += g;
          (*grad_eta)(c, t - 1) += -2.0 * g;
          (*grad_eta)(c, t - 2) += g;
        }
        if (grad_params) {
          (*grad_params)[C + c] += -1.0 / lambda + d2 * d2 / (lambda * lambda * lambda);
        }
      }
      lp += half_normal_logpdf(lambda, scale);
      if (grad_params) {
        (*grad_params)[C + c] += -lambda / (scale * scale);
        (*grad_params)[2 * C] += -1.0 / scale + lambda * lambda / (scale * scale * scale);
      }
    }
    lp += half_normal_logpdf(scale, 1.0);
    if (grad_params) (*grad_params)[2 * C] += -scale;
    return lp;
  }
};

std::map<std::string, std::function<std::unique_ptr<ProcessModel>()>>& registry() {
  static std::map<std::string, std::function<std::unique_ptr<ProcessModel>()>> r = {
      {"rw2", [] { return std::make_unique<Rw2ProcessModel>(); }}};
  return r;
}

}  // namespace

double process_log_prior(const LatentGrid& grid, const ProcessParams& params) {
  const int C = grid.spec.n_populations();
  if (params.level.size() != C || params.smoothing_sd.size() != C) {
    throw std::invalid_argument("process_log_prior: parameter dimensions mismatch");
  }
  Eigen::VectorXd flat(2 * C + 1);
  flat.head(C) = params.level;
  flat.segment(C, C) = params.smoothing_sd;
  flat[2 * C] = params.smoothing_sd_scale;
  return Rw2ProcessModel().log_prior(grid.spec, grid.eta, flat);
}

void register_process_model(const std::string& name,
                            std::function<std::unique_ptr<ProcessModel>()> factory) {
  registry()[name] = std::move(factory);
}

std::unique_ptr<ProcessModel> make_process_model(const std::string& name) {
  const auto it = registry().find(name);
  if (it == registry().end()) {
    throw std::invalid_argument("unknown process model: " + name);
  }
  return it->second();
}

std::vector<std::string> registered_process_models() {
  std::vector<std::string> names;
  for (const auto& [name, _] : registry()) names.push_back(name);
  return names;
}

}  // namespace nos
