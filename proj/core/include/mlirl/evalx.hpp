#pragma once

// Evaluation with a synthetic ground-truth judge (the instance's r_star) and
// the empirical concentration study of the surrogate likelihood.

#include "mlirl/objectives.hpp"

#include <cstdint>
#include <vector>

namespace mlirl {

/// Fraction of items with r(x, chosen) > r(x, rejected); exact ties count 0.5.
double reward_accuracy(const RewardTable& reward, const PreferenceDataset& heldout);
double reward_accuracy(const RewardModel& reward, const PreferenceDataset& heldout);

/// Held-out judge-labeled preferences: two distinct completions drawn from a
/// 50/50 mixture of pi_ref and pi_expert at a mu-sampled prompt, chosen = the
/// higher r_star. Pairs with exactly equal r_star are discarded and redrawn.
PreferenceDataset make_heldout_preferences(const Instance& instance, std::size_t n, std::uint64_t seed);

/// Mean r_star over n_samples completions per prompt, averaged with mu.
double ground_truth_score(const SequencePolicy& policy, const RewardModel& r_star, std::size_t n_samples,
                          std::uint64_t seed);
/// E_{x~mu, y~pi}[r_star(x, y)].
double ground_truth_score_exact(const SequencePolicy& policy, const RewardModel& r_star);

/// Fraction of matches policy_a wins against policy_b under r_star, ties 0.5.
/// Each match draws its prompt from a stream shared by both seat orders and
/// each seat's completion from its own stream, so
///   win_rate(a, b, s) + win_rate(b, a, mirror_seed(s)) == 1 exactly.
double win_rate(const SequencePolicy& policy_a, const SequencePolicy& policy_b, const RewardModel& r_star,
                std::size_t n_matches, std::uint64_t seed);
std::uint64_t mirror_seed(std::uint64_t seed);

/// E_mu[KL(pi_E || pi)].
double kl_to_expert(const SequencePolicy& policy, const Instance& instance);

/// Mean log pi(y|x) over a dataset (negated SFT loss).
double heldout_loglik(const SequencePolicy& policy, const DemonstrationDataset& demos);

struct EvalReport {
  double reward_accuracy = 0.0;
  double ground_truth_score = 0.0;
  double win_rate = 0.0;
  double kl_to_expert = 0.0;
  double heldout_demo_loglik = 0.0;
};

struct ConcentrationReport {
  std::vector<std::size_t> sizes;
  std::size_t trials = 0;
  std::size_t theta_samples = 0;
  std::vector<double> median_gap;
  std::vector<double> p90_gap;
  std::vector<double> bound;
  double slope = 0.0;
  double intercept = 0.0;
  double delta = 0.05;
  double reward_bound = 0.0;    // C_r
  double log_ref_floor = 0.0;   // C_p
};

/// (C_r - C_p) * sqrt(ln(2 / delta) / (2 n)).
double concentration_bound(double reward_bound, double log_ref_floor, std::size_t n, double delta);

/// Least-squares slope and intercept of y against x.
std::pair<double, double> fit_line(std::span<const double> x, std::span<const double> y);

/// For each of `theta_samples` random bounded tabular rewards, each size and
/// each trial, draws D ~ pi_E and records |L(theta) - L_hat(theta; D)| at the
/// beta = 1 inner problem; aggregates medians and 90th percentiles per size
/// and fits log(median gap) against log|D|.
ConcentrationReport concentration_experiment(const Instance& instance, std::size_t theta_samples,
                                             const std::vector<std::size_t>& sizes, std::size_t trials,
                                             std::uint64_t seed, double delta = 0.05);

/// Draws n (prompt, completion) pairs with prompts ~ mu and completions ~ pi.
DemonstrationDataset sample_from_policy(const SequencePolicy& policy, std::size_t n, std::uint64_t seed);

}  // namespace mlirl
