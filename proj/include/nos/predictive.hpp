#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "nos/datamodel.hpp"
#include "nos/sampler.hpp"

namespace nos {

enum class ErrorKind { Source, Outlier };

/// Posterior-predictive error draws for one error type. Each sample picks
/// a posterior draw uniformly at random, then draws from that error
/// type's conditional law: N(0, sigma_source^2) for source errors, or a
/// fresh half-Cauchy local scale pushed through the horseshoe for
/// outlier errors. Callers usually plot log10 of the absolute values.
std::vector<double> predictive_error_samples(const PosteriorDraws& draws,
                                             ErrorKind kind,
                                             std::optional<SourceType> source,
                                             int n, std::uint64_t seed);

}  // namespace nos
