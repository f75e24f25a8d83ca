#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace nos {

inline constexpr double kLog2Pi = 1.8378770664093454836;  // ln(2*pi)

/// Log density of N(mu, sd^2) at x.
double normal_logpdf(double x, double mu, double sd);

/// Log density of the half-normal with scale sd, support x >= 0.
/// Returns -inf for x < 0 or sd <= 0.
double half_normal_logpdf(double x, double sd);

/// Log density of the half-Cauchy with the given scale, support x >= 0.
double half_cauchy_logpdf(double x, double scale);

/// log(exp(a) + exp(b)) without overflow.
double log_sum_exp(double a, double b);

/// Inverse standard normal CDF. Rational approximation plus one
/// Newton refinement; good to ~1e-14 over (0, 1).
double inv_normal_cdf(double p);

/// Empirical quantile with linear interpolation between order
/// statistics (the common "type 7" rule). q in [0, 1].
double quantile(std::span<const double> sorted_values, double q);

/// Sorts a copy and delegates to the sorted-input overload.
double quantile_unsorted(std::span<const double> values, double q);

double mean(std::span<const double> values);
double sample_variance(std::span<const double> values);  // n-1 denominator

/// FNV-1a 64-bit hash, used to stamp output files with a config digest.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace nos
