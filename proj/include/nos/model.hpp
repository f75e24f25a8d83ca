#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "nos/datamodel.hpp"
#include "nos/process.hpp"
#include "nos/sampler.hpp"

namespace nos {

/// Free parameters on their natural (constrained) scale.
struct ConstrainedParams {
  Eigen::MatrixXd eta;             // populations x years
  Eigen::VectorXd process_params;
  DataModelParams dm;
};

/// Flat unconstrained layout: eta block, process block, then the
/// data-model scales (log) and rho (logit). Every coordinate carries a
/// constrained name and a transform tag.
struct ParamLayout {
  int dim = 0;
  int n_pop = 0, n_years = 0;
  int eta_offset = 0;
  int process_offset = 0, n_process = 0;
  int source_offset = 0;
  int char_offset = 0, tau_offset = 0, slab_offset = 0;
  int gamma_offset = 0, n_gamma = 0;
  int rho_offset = 0;
  std::vector<std::string> names;
  std::vector<ParamTransform> transforms;
  ProcessParamLayout process;

  int eta_index(int pop, int year_idx) const {
    return eta_offset + pop * n_years + year_idx;
  }
};

/// Joint posterior over (latent grid, process params, data-model params)
/// on the unconstrained scale, with analytic gradients.
///
/// Two evaluation paths are provided: a straightforward serial reference
/// used by tests and the benchmark, and an OpenMP kernel that partitions
/// work by population and reduces partial sums in a fixed order, so
/// results are independent of thread count.
class Model final : public LogDensityTarget {
 public:
  Model(Dataset data, std::shared_ptr<const ProcessModel> process,
        PriorConfig priors);

  const Dataset& data() const { return data_; }
  const ParamLayout& layout() const { return layout_; }
  const PriorConfig& priors() const { return priors_; }

  int dim() const override { return layout_.dim; }
  double log_density_grad(const Eigen::VectorXd& pos,
                          Eigen::VectorXd& grad) const override;
  double log_density(const Eigen::VectorXd& pos) const;

  /// Serial reference implementation: flat loops in observation order.
  double log_density_grad_reference(const Eigen::VectorXd& pos,
                                    Eigen::VectorXd* grad) const;

  ConstrainedParams constrain(const Eigen::VectorXd& pos) const;
  /// Inverse of constrain; also returns the log absolute Jacobian
  /// determinant of the constraining map at the result.
  std::pair<Eigen::VectorXd, double> unconstrain(const ConstrainedParams& cp) const;
  double log_jacobian(const Eigen::VectorXd& pos) const;

  std::vector<std::string> constrained_names() const override { return layout_.names; }
  Eigen::VectorXd constrain_draw(const Eigen::VectorXd& pos) const override;
  Eigen::VectorXd init_point(Rng& rng) const override;

 private:
  double eval(const Eigen::VectorXd& pos, Eigen::VectorXd* grad, bool parallel) const;

  Dataset data_;
  std::shared_ptr<const ProcessModel> process_;
  PriorConfig priors_;
  ParamLayout layout_;
  Eigen::VectorXd pop_mean_z_;  // weighted per-population mean, for inits
};

}  // namespace nos
