#include "nos/predictive.hpp"

#include <stdexcept>
#include <string>

#include "nos/rng.hpp"

namespace nos {

std::vector<double> predictive_error_samples(const PosteriorDraws& draws,
                                             ErrorKind kind,
                                             std::optional<SourceType> source,
                                             int n, std::uint64_t seed) {
  if (draws.n_chains() == 0 || draws.n_draws() == 0) {
    throw std::invalid_argument("predictive_error_samples: empty draws");
  }
  Rng rng(seed);
  const std::int64_t total =
      static_cast<std::int64_t>(draws.n_chains()) * draws.n_draws();
  auto value_at = [&](int param, std::int64_t k) {
    const int chain = static_cast<int>(k / draws.n_draws());
    const int d = static_cast<int>(k % draws.n_draws());
    return draws.chains[chain](d, param);
  };

  std::vector<double> out(n);
  if (kind == ErrorKind::Source) {
    if (!source || *source == SourceType::DHS) {
      throw std::invalid_argument(
          "predictive_error_samples: source errors need a non-DHS source type");
    }
    const std::string name = std::string("sigma_source[") + to_string(*source) + "]";
    const int param = draws.param_index(name);
    if (param < 0) {
      throw std::invalid_argument("predictive_error_samples: draws lack " + name);
    }
    for (int i = 0; i < n; ++i) {
      const double sd = value_at(param, rng.uniform_int(0, total - 1));
      out[i] = rng.normal(0.0, sd);
    }
    return out;
  }

  const int p_tau = draws.param_index("tau");
  const int p_slab = draws.param_index("slab");
  if (p_tau < 0 || p_slab < 0) {
    throw std::invalid_argument("predictive_error_samples: draws lack tau/slab");
  }
  for (int i = 0; i < n; ++i) {
    const std::int64_t k = rng.uniform_int(0, total - 1);
    const double tau = value_at(p_tau, k);
    const double slab = value_at(p_slab, k);
    const double gamma = rng.half_cauchy();
    const double sd =
        (tau > 0.0 && slab > 0.0) ? horseshoe_scale(tau, slab, gamma) : 0.0;
    out[i] = rng.normal(0.0, sd);
  }
  return out;
}

}  // namespace nos
