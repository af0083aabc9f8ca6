#include "mlirl/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mlirl {

namespace {

void check_weights(const std::vector<double>& weights, std::size_t n) {
  if (weights.size() != n) throw Error("dataset weights size mismatch");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error("dataset weights must be finite and non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw Error("dataset weights must sum to 1");
}

void check_beta(double beta) {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw Error("beta must be positive");
}

void check_same_support(const Support& a, const Support& b) {
  if (!(a == b)) throw Error("policies and rewards must share a support");
}

}  // namespace

DemonstrationDataset::DemonstrationDataset(std::vector<Demonstration> items) : items_(std::move(items)) {
  if (items_.empty()) throw Error("demonstration dataset is empty");
}

DemonstrationDataset::DemonstrationDataset(std::vector<Demonstration> items, std::vector<double> weights)
    : items_(std::move(items)), weights_(std::move(weights)) {
  if (items_.empty()) throw Error("demonstration dataset is empty");
  check_weights(*weights_, items_.size());
}

DemonstrationDataset DemonstrationDataset::full_population(const SequencePolicy& policy) {
  const Support& s = policy.support();
  std::vector<Demonstration> items;
  std::vector<double> weights;
  items.reserve(s.cell_count());
  weights.reserve(s.cell_count());
  for (std::size_t p = 0; p < s.prompt_count(); ++p) {
    for (std::size_t c = 0; c < s.completion_count(); ++c) {
      items.push_back({s.prompts().prompt(p), s.completions().at(c)});
      weights.push_back(s.prompts().weight(p) * policy.prob(p, c));
    }
  }
  // Rescale away the O(1e-16) drift so the weights validate.
  double total = 0.0;
  for (double w : weights) total += w;
  for (double& w : weights) w /= total;
  return DemonstrationDataset(std::move(items), std::move(weights));
}

double DemonstrationDataset::weight(std::size_t i) const {
  return weights_ ? (*weights_)[i] : 1.0 / static_cast<double>(items_.size());
}

PreferenceDataset::PreferenceDataset(std::vector<Preference> items) : items_(std::move(items)) {
  if (items_.empty()) throw Error("preference dataset is empty");
  for (const auto& item : items_) {
    if (item.chosen == item.rejected) throw Error("chosen and rejected completions must differ");
  }
}

PreferenceDataset::PreferenceDataset(std::vector<Preference> items, std::vector<double> weights)
    : PreferenceDataset(std::move(items)) {
  check_weights(weights, items_.size());
  weights_ = std::move(weights);
}

double PreferenceDataset::weight(std::size_t i) const {
  return weights_ ? (*weights_)[i] : 1.0 / static_cast<double>(items_.size());
}

EmpiricalDistribution empirical_distribution(const DemonstrationDataset& demos, const Support& support) {
  EmpiricalDistribution out{std::vector<double>(support.cell_count(), 0.0),
                            std::vector<double>(support.prompt_count(), 0.0)};
  for (std::size_t i = 0; i < demos.size(); ++i) {
    const std::size_t p = support.prompt_index(demos[i].prompt);
    const std::size_t c = support.completion_index(demos[i].completion);
    out.cell_mass[support.cell(p, c)] += demos.weight(i);
    out.prompt_mass[p] += demos.weight(i);
  }
  return out;
}

double sft_loss(const SequencePolicy& policy, const DemonstrationDataset& demos) {
  double total = 0.0;
  for (std::size_t i = 0; i < demos.size(); ++i) {
    const double w = demos.weight(i);
    if (w == 0.0) continue;
    total -= w * policy.logprob(demos[i].prompt, demos[i].completion);
  }
  return total;
}

double btl_loss(const RewardTable& reward, const PreferenceDataset& prefs) {
  double total = 0.0;
  for (std::size_t i = 0; i < prefs.size(); ++i) {
    const auto& item = prefs[i];
    const double margin = reward.score(item.prompt, item.chosen) - reward.score(item.prompt, item.rejected);
    total -= prefs.weight(i) * log_sigmoid(margin);
  }
  return total;
}

double btl_loss(const RewardModel& reward, const PreferenceDataset& prefs) {
  double total = 0.0;
  for (std::size_t i = 0; i < prefs.size(); ++i) {
    const auto& item = prefs[i];
    const double margin = reward.score(item.prompt, item.chosen) - reward.score(item.prompt, item.rejected);
    total -= prefs.weight(i) * log_sigmoid(margin);
  }
  return total;
}

std::vector<double> btl_loss_gradient(const RewardModel& reward, const PreferenceDataset& prefs) {
  const Support& s = reward.support();
  std::vector<double> grad(reward.param_count(), 0.0);
  for (std::size_t i = 0; i < prefs.size(); ++i) {
    const auto& item = prefs[i];
    const std::size_t p = s.prompt_index(item.prompt);
    const std::size_t cw = s.completion_index(item.chosen);
    const std::size_t cl = s.completion_index(item.rejected);
    const double margin = reward.score(p, cw) - reward.score(p, cl);
    // d/dm [-log sigmoid(m)] = -sigmoid(-m)
    const double coeff = -prefs.weight(i) * sigmoid(-margin);
    reward.accumulate_gradient(p, cw, coeff, grad);
    reward.accumulate_gradient(p, cl, -coeff, grad);
  }
  return grad;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw Error("distributions differ in size");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) throw Error("KL undefined");
    kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return std::max(kl, 0.0);
}

double expected_kl(const SequencePolicy& a, const SequencePolicy& b) {
  check_same_support(a.support(), b.support());
  const PromptSet& prompts = a.support().prompts();
  double total = 0.0;
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    total += prompts.weight(p) * kl_divergence(a.probabilities(p), b.probabilities(p));
  }
  return total;
}

double kl_rl_objective(const SequencePolicy& policy, const RewardTable& reward,
                       const SequencePolicy& pi_ref, double beta) {
  check_beta(beta);
  check_same_support(policy.support(), reward.support());
  const PromptSet& prompts = policy.support().prompts();
  double expected_reward = 0.0;
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    const auto probs = policy.probabilities(p);
    const auto r = reward.row(p);
    double acc = 0.0;
    for (std::size_t c = 0; c < probs.size(); ++c) acc += probs[c] * r[c];
    expected_reward += prompts.weight(p) * acc;
  }
  return expected_reward - beta * expected_kl(policy, pi_ref);
}

double kl_rl_objective(const SequencePolicy& policy, const RewardModel& reward,
                       const SequencePolicy& pi_ref, double beta) {
  return kl_rl_objective(policy, reward.table(), pi_ref, beta);
}

std::vector<double> log_partition(const RewardTable& reward, const SequencePolicy& pi_ref, double beta) {
  check_beta(beta);
  check_same_support(reward.support(), pi_ref.support());
  const Support& s = pi_ref.support();
  std::vector<double> out(s.prompt_count());
  std::vector<double> terms(s.completion_count());
  for (std::size_t p = 0; p < s.prompt_count(); ++p) {
    const auto logref = pi_ref.log_probabilities(p);
    const auto r = reward.row(p);
    for (std::size_t c = 0; c < terms.size(); ++c) terms[c] = logref[c] + r[c] / beta;
    out[p] = log_sum_exp(terms);
  }
  return out;
}

SequencePolicy optimal_policy(const RewardTable& reward, const SequencePolicy& pi_ref, double beta) {
  check_beta(beta);
  check_same_support(reward.support(), pi_ref.support());
  const Support& s = pi_ref.support();
  std::vector<double> log_weights(s.cell_count());
  for (std::size_t p = 0; p < s.prompt_count(); ++p) {
    const auto logref = pi_ref.log_probabilities(p);
    const auto r = reward.row(p);
    for (std::size_t c = 0; c < s.completion_count(); ++c) {
      log_weights[s.cell(p, c)] = logref[c] + r[c] / beta;
    }
  }
  return SequencePolicy::from_log_weights(s, log_weights);
}

SequencePolicy optimal_policy(const RewardModel& reward, const SequencePolicy& pi_ref, double beta) {
  return optimal_policy(reward.table(), pi_ref, beta);
}

double gibbs_residual(const SequencePolicy& policy, const RewardTable& reward,
                      const SequencePolicy& pi_ref, double beta) {
  check_beta(beta);
  const Support& s = policy.support();
  double worst = 0.0;
  for (std::size_t p = 0; p < s.prompt_count(); ++p) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t c = 0; c < s.completion_count(); ++c) {
      const double v = policy.logprob(p, c) - pi_ref.logprob(p, c) - reward(p, c) / beta;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    worst = std::max(worst, hi - lo);
  }
  return worst;
}

double dpo_loss(const SequencePolicy& policy, const SequencePolicy& pi_ref,
                const PreferenceDataset& prefs, double beta) {
  if (!(beta >= 0.0)) throw Error("beta must be non-negative");
  double total = 0.0;
  for (std::size_t i = 0; i < prefs.size(); ++i) {
    const auto& item = prefs[i];
    const double chosen = policy.logprob(item.prompt, item.chosen) - pi_ref.logprob(item.prompt, item.chosen);
    const double rejected =
        policy.logprob(item.prompt, item.rejected) - pi_ref.logprob(item.prompt, item.rejected);
    total -= prefs.weight(i) * log_sigmoid(beta * (chosen - rejected));
  }
  return total;
}

RewardTable implicit_reward(const SequencePolicy& policy, const SequencePolicy& pi_ref, double beta) {
  check_same_support(policy.support(), pi_ref.support());
  const Support& s = policy.support();
  std::vector<double> values(s.cell_count());
  for (std::size_t p = 0; p < s.prompt_count(); ++p) {
    for (std::size_t c = 0; c < s.completion_count(); ++c) {
      values[s.cell(p, c)] = beta * (policy.logprob(p, c) - pi_ref.logprob(p, c));
    }
  }
  return RewardTable(s, std::move(values));
}

namespace {

// E_D[r + beta * log pi_ref]
double demo_term(const RewardTable& reward, const DemonstrationDataset& demos,
                 const SequencePolicy& pi_ref, double beta) {
  double total = 0.0;
  for (std::size_t i = 0; i < demos.size(); ++i) {
    const double w = demos.weight(i);
    if (w == 0.0) continue;
    const auto& d = demos[i];
    total += w * (reward.score(d.prompt, d.completion) + beta * pi_ref.logprob(d.prompt, d.completion));
  }
  return total;
}

}  // namespace

double single_level_surrogate(const RewardTable& reward, const DemonstrationDataset& demos,
                              const SequencePolicy& pi_ref, double beta) {
  const auto logz = log_partition(reward, pi_ref, beta);
  const PromptSet& prompts = pi_ref.support().prompts();
  double partition_term = 0.0;
  for (std::size_t p = 0; p < prompts.size(); ++p) partition_term += prompts.weight(p) * logz[p];
  return demo_term(reward, demos, pi_ref, beta) - beta * partition_term;
}

double single_level_surrogate(const RewardModel& reward, const DemonstrationDataset& demos,
                              const SequencePolicy& pi_ref, double beta) {
  return single_level_surrogate(reward.table(), demos, pi_ref, beta);
}

double bilevel_surrogate(const RewardTable& reward, const DemonstrationDataset& demos,
                         const SequencePolicy& pi_ref, double beta) {
  const SequencePolicy inner = optimal_policy(reward, pi_ref, beta);
  // E_{mu, pi*}[r - beta KL(pi* || pi_ref)] is the inner KL-regularized value.
  const double inner_value = kl_rl_objective(inner, reward, pi_ref, beta);
  return demo_term(reward, demos, pi_ref, beta) - inner_value;
}

double bilevel_surrogate(const RewardModel& reward, const DemonstrationDataset& demos,
                         const SequencePolicy& pi_ref, double beta) {
  return bilevel_surrogate(reward.table(), demos, pi_ref, beta);
}

double exact_likelihood(const RewardModel& reward, const Instance& instance, double beta) {
  const SequencePolicy inner = optimal_policy(reward, instance.pi_ref, beta);
  const Support& s = instance.support;
  double total = 0.0;
  for (std::size_t p = 0; p < s.prompt_count(); ++p) {
    const auto expert = instance.pi_expert.probabilities(p);
    const auto logp = inner.log_probabilities(p);
    double acc = 0.0;
    for (std::size_t c = 0; c < expert.size(); ++c) {
      if (expert[c] > 0.0) acc += expert[c] * logp[c];
    }
    total += s.prompts().weight(p) * acc;
  }
  return total;
}

std::vector<double> surrogate_gradient(const RewardModel& reward, const DemonstrationDataset& demos,
                                       const SequencePolicy& pi_ref, double beta) {
  const Support& s = reward.support();
  const SequencePolicy inner = optimal_policy(reward, pi_ref, beta);
  std::vector<double> grad(reward.param_count(), 0.0);
  for (std::size_t i = 0; i < demos.size(); ++i) {
    const double w = demos.weight(i);
    if (w == 0.0) continue;
    reward.accumulate_gradient(s.prompt_index(demos[i].prompt), s.completion_index(demos[i].completion), w,
                               grad);
  }
  for (std::size_t p = 0; p < s.prompt_count(); ++p) {
    const double mu = s.prompts().weight(p);
    const auto probs = inner.probabilities(p);
    for (std::size_t c = 0; c < probs.size(); ++c) {
      reward.accumulate_gradient(p, c, -mu * probs[c], grad);
    }
  }
  return grad;
}

std::vector<double> stochastic_gradient(const RewardModel& reward, const DemonstrationDataset& demo_batch,
                                        const DemonstrationDataset& generated_batch) {
  const Support& s = reward.support();
  std::vector<double> grad(reward.param_count(), 0.0);
  for (std::size_t i = 0; i < demo_batch.size(); ++i) {
    reward.accumulate_gradient(s.prompt_index(demo_batch[i].prompt),
                               s.completion_index(demo_batch[i].completion), demo_batch.weight(i), grad);
  }
  for (std::size_t i = 0; i < generated_batch.size(); ++i) {
    reward.accumulate_gradient(s.prompt_index(generated_batch[i].prompt),
                               s.completion_index(generated_batch[i].completion), -generated_batch.weight(i),
                               grad);
  }
  return grad;
}

}  // namespace mlirl
