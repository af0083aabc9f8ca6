#pragma once

// Scalar objectives and exact gradients: SFT, Bradley-Terry, KL-regularized
// reward maximization, its closed-form optimum, DPO, the bi-level likelihood,
// its surrogate (bi-level and single-level forms) and the surrogate gradient.

#include "mlirl/seqcore.hpp"

#include <optional>
#include <vector>

namespace mlirl {

struct Demonstration {
  TokenSeq prompt;
  TokenSeq completion;
  bool operator==(const Demonstration&) const = default;
};

/// Demonstrations D. Unweighted datasets weight every item 1/|D|; a weighted
/// dataset represents a full population (e.g. every (x, y) weighted by
/// mu(x) * pi_E(y|x)).
class DemonstrationDataset {
 public:
  explicit DemonstrationDataset(std::vector<Demonstration> items);
  DemonstrationDataset(std::vector<Demonstration> items, std::vector<double> weights);

  /// Every cell of `policy`'s support weighted by mu(x) * policy(y|x).
  static DemonstrationDataset full_population(const SequencePolicy& policy);

  std::size_t size() const { return items_.size(); }
  const Demonstration& operator[](std::size_t i) const { return items_[i]; }
  const std::vector<Demonstration>& items() const { return items_; }
  bool is_weighted() const { return weights_.has_value(); }
  double weight(std::size_t i) const;
  const std::optional<std::vector<double>>& weights() const { return weights_; }

  bool operator==(const DemonstrationDataset&) const = default;

 private:
  std::vector<Demonstration> items_;
  std::optional<std::vector<double>> weights_;
};

struct Preference {
  TokenSeq prompt;
  TokenSeq chosen;
  TokenSeq rejected;
  bool operator==(const Preference&) const = default;
};

class PreferenceDataset {
 public:
  explicit PreferenceDataset(std::vector<Preference> items);
  PreferenceDataset(std::vector<Preference> items, std::vector<double> weights);

  std::size_t size() const { return items_.size(); }
  const Preference& operator[](std::size_t i) const { return items_[i]; }
  const std::vector<Preference>& items() const { return items_; }
  bool is_weighted() const { return weights_.has_value(); }
  double weight(std::size_t i) const;

  bool operator==(const PreferenceDataset&) const = default;

 private:
  std::vector<Preference> items_;
  std::optional<std::vector<double>> weights_;
};

/// Empirical distribution of D per prompt, laid out over `support`; prompts
/// absent from D get an all-zero row. Also returns the prompt mass of D.
struct EmpiricalDistribution {
  std::vector<double> cell_mass;    // sum of item weights per cell
  std::vector<double> prompt_mass;  // sum of item weights per prompt
};
EmpiricalDistribution empirical_distribution(const DemonstrationDataset& demos, const Support& support);

// -- Supervised fine-tuning ------------------------------------------------
/// -E_D[log pi(y|x)].
double sft_loss(const SequencePolicy& policy, const DemonstrationDataset& demos);

// -- Bradley-Terry-Luce ----------------------------------------------------
/// -E_P[log sigmoid(r(x, y_w) - r(x, y_l))].
double btl_loss(const RewardTable& reward, const PreferenceDataset& prefs);
double btl_loss(const RewardModel& reward, const PreferenceDataset& prefs);
/// Gradient of btl_loss with respect to the reward parameters.
std::vector<double> btl_loss_gradient(const RewardModel& reward, const PreferenceDataset& prefs);

// -- KL-regularized RL -----------------------------------------------------
/// KL(p || q) for two distributions over the same completion space.
double kl_divergence(std::span<const double> p, std::span<const double> q);
/// E_mu[KL(a(.|x) || b(.|x))].
double expected_kl(const SequencePolicy& a, const SequencePolicy& b);
/// E_{x~mu, y~pi}[r] - beta * E_x[KL(pi || pi_ref)], by exact enumeration.
double kl_rl_objective(const SequencePolicy& policy, const RewardTable& reward,
                       const SequencePolicy& pi_ref, double beta);
double kl_rl_objective(const SequencePolicy& policy, const RewardModel& reward,
                       const SequencePolicy& pi_ref, double beta);

// -- Closed-form optimum ---------------------------------------------------
/// pi*(y|x) proportional to pi_ref(y|x) * exp(r(x, y) / beta).
SequencePolicy optimal_policy(const RewardTable& reward, const SequencePolicy& pi_ref, double beta = 1.0);
SequencePolicy optimal_policy(const RewardModel& reward, const SequencePolicy& pi_ref, double beta = 1.0);
/// log sum_y pi_ref(y|x) exp(r(x, y) / beta) for every prompt.
std::vector<double> log_partition(const RewardTable& reward, const SequencePolicy& pi_ref, double beta = 1.0);
/// max over prompts of the spread (max - min over y) of
/// log pi(y|x) - log pi_ref(y|x) - r(x, y) / beta.
double gibbs_residual(const SequencePolicy& policy, const RewardTable& reward,
                      const SequencePolicy& pi_ref, double beta = 1.0);

// -- Direct preference optimization ----------------------------------------
/// -E_P[log sigmoid(beta * (log pi/pi_ref (y_w) - log pi/pi_ref (y_l)))].
double dpo_loss(const SequencePolicy& policy, const SequencePolicy& pi_ref,
                const PreferenceDataset& prefs, double beta);
/// beta * log(pi / pi_ref) as a reward table.
RewardTable implicit_reward(const SequencePolicy& policy, const SequencePolicy& pi_ref, double beta);

// -- Maximum-likelihood surrogate ------------------------------------------
// With temperature beta the surrogate is
//   E_D[r + beta log pi_ref] - beta E_mu[log sum_y pi_ref exp(r / beta)]
// which equals beta * E_D[log pi*_beta] when the prompt mass of D matches mu,
// and reduces to the unscaled objective at beta = 1. Its gradient is exactly E_D[grad r] - E_{mu, pi*}[grad r].

/// Single-level rewrite (log-partition form).
double single_level_surrogate(const RewardModel& reward, const DemonstrationDataset& demos,
                              const SequencePolicy& pi_ref, double beta = 1.0);
double single_level_surrogate(const RewardTable& reward, const DemonstrationDataset& demos,
                              const SequencePolicy& pi_ref, double beta = 1.0);
/// Literal bi-level form: the inner optimum pi* is computed first and
/// plugged into E_D[r + beta log pi_ref] - E_{mu, pi*}[r - beta KL(pi* || pi_ref)].
double bilevel_surrogate(const RewardModel& reward, const DemonstrationDataset& demos,
                         const SequencePolicy& pi_ref, double beta = 1.0);
double bilevel_surrogate(const RewardTable& reward, const DemonstrationDataset& demos,
                         const SequencePolicy& pi_ref, double beta = 1.0);

// -- Exact likelihood ------------------------------------------------------
/// E_{x~mu, y~pi_E}[log pi*_{r}(y|x)] with pi* the beta-tempered optimum.
double exact_likelihood(const RewardModel& reward, const Instance& instance, double beta = 1.0);

// -- Surrogate gradient ----------------------------------------------------
/// E_D[grad r] - E_{x~mu, y~pi*}[grad r], second term by exact enumeration.
std::vector<double> surrogate_gradient(const RewardModel& reward, const DemonstrationDataset& demos,
                                       const SequencePolicy& pi_ref, double beta = 1.0);
/// Sampled form: mean_demo grad r - mean_generated grad r.
std::vector<double> stochastic_gradient(const RewardModel& reward, const DemonstrationDataset& demo_batch,
                                        const DemonstrationDataset& generated_batch);

}  // namespace mlirl
