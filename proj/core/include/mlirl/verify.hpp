#pragma once

// Numerical self-checks: finite-difference gradients, closed-form optimum
// residuals, surrogate identities and the concentration study.

#include "mlirl/evalx.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mlirl {

struct CheckResult {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double threshold = 0.0;
  std::string detail;
};

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h.
std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                       std::span<const double> x, double step = 1e-5);

/// max_i |a_i - b_i| / (1 + max_i |a_i|).
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric);

/// surrogate_gradient vs central differences of single_level_surrogate on
/// `instances` random tabular instances (V=3, H=3, 3 prompts).
CheckResult check_gradient(std::uint64_t seed, std::size_t instances = 10, double tolerance = 1e-6);

/// Normalization and Gibbs residuals of optimal_policy on random
/// (reward, pi_ref, beta) triples, beta cycling through 0.1, 1, 10 and random values.
CheckResult check_closed_form(std::uint64_t seed, std::size_t triples = 100, double tolerance = 1e-10);

/// single_level_surrogate vs bilevel_surrogate on random theta.
CheckResult check_surrogate_identity(std::uint64_t seed, std::size_t thetas = 100, double tolerance = 1e-10);

/// Full-population surrogate at beta = 1 vs exact_likelihood on random theta.
CheckResult check_population_identity(std::uint64_t seed, std::size_t thetas = 20, double tolerance = 1e-10);

/// dpo_loss vs btl_loss of the implicit reward beta * log(pi / pi_ref), per item.
CheckResult check_dpo_btl_identity(std::uint64_t seed, std::size_t items = 1000, double tolerance = 1e-12);

struct ConcentrationCheck {
  CheckResult result;
  ConcentrationReport report;
};

/// Seeded V=3, H=3, 3-prompt instance used by the concentration study.
Instance concentration_instance(std::uint64_t seed);

/// Slope of log median gap vs log |D| within [slope_lo, slope_hi] and every
/// 90th-percentile gap under the bound.
ConcentrationCheck check_concentration(const Instance& instance, std::uint64_t seed,
                                       const std::vector<std::size_t>& sizes = {16, 64, 256, 1024, 4096},
                                       std::size_t trials = 50, std::size_t theta_samples = 5,
                                       double slope_lo = -0.65, double slope_hi = -0.35);

std::string format_check(const CheckResult& result);

}  // namespace mlirl
