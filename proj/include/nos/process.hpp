#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "nos/domain.hpp"

namespace nos {

enum class ParamTransform { Identity, LogPositive, LogitUnit };

/// Free parameters a process model contributes beyond the latent grid.
/// init_* describe chain starting ranges on the unconstrained scale;
/// init_center_pop >= 0 centers the draw on that population's data mean.
struct ProcessParamLayout {
  std::vector<std::string> names;
  std::vector<ParamTransform> transforms;
  std::vector<int> init_center_pop;
  std::vector<double> init_lo, init_hi;
  int size() const { return static_cast<int>(names.size()); }

  void add(std::string name, ParamTransform tf, int center_pop, double lo, double hi) {
    names.push_back(std::move(name));
    transforms.push_back(tf);
    init_center_pop.push_back(center_pop);
    init_lo.push_back(lo);
    init_hi.push_back(hi);
  }
};

/// Log-prior contribution over the latent grid. Implementations must
/// supply analytic gradients on the constrained scale.
class ProcessModel {
 public:
  virtual ~ProcessModel() = default;
  virtual std::string name() const = 0;
  virtual ProcessParamLayout layout(const GridSpec& grid) const = 0;
  virtual double log_prior(const GridSpec& grid, const Eigen::MatrixXd& eta,
                           const Eigen::VectorXd& params) const = 0;
  /// Adds d(log prior)/d(eta) and d(log prior)/d(params) into the
  /// provided accumulators and returns the log prior.
  virtual double log_prior_grad(const GridSpec& grid, const Eigen::MatrixXd& eta,
                                const Eigen::VectorXd& params,
                                Eigen::MatrixXd& grad_eta,
                                Eigen::VectorXd& grad_params) const = 0;
};

/// Second-order random walk with a hierarchical smoothing scale:
/// diffuse normals on the level and first difference, N(0, lambda_c^2)
/// innovations on second differences, half-normal hierarchy on lambda_c.
struct ProcessParams {
  Eigen::VectorXd level;          // per population
  Eigen::VectorXd smoothing_sd;   // lambda_c, per population
  double smoothing_sd_scale = 1.0;
};

double process_log_prior(const LatentGrid& grid, const ProcessParams& params);

/// Name-keyed registry so alternative process models can be added without
/// touching the inference machinery.
void register_process_model(const std::string& name,
                            std::function<std::unique_ptr<ProcessModel>()> factory);
std::unique_ptr<ProcessModel> make_process_model(const std::string& name);
std::vector<std::string> registered_process_models();

}  // namespace nos
