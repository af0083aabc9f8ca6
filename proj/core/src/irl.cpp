#include "mlirl/irl.hpp"

#include "mlirl/evalx.hpp"
#include "mlirl/parallel.hpp"
#include "mlirl/random.hpp"

#include <chrono>
#include <cmath>
#include <string_view>

namespace mlirl {

void IrlConfig::validate() const {
  if (iterations < 1) throw Error("iterations must be at least 1");
  if (reward_steps_per_iter < 0) throw Error("reward_steps_per_iter must be non-negative");
  if (!(reward_learning_rate >= 0.0) || !std::isfinite(reward_learning_rate)) {
    throw Error("reward learning rate must be finite and non-negative");
  }
  if (generations_per_demo < 1) throw Error("generations_per_demo must be at least 1");
  if (policy_mode == PolicyMode::best_of_n && best_of_n < 2) throw Error("best_of_n must be at least 2");
  if (best_of_n_draws < 1) throw Error("best_of_n_draws must be at least 1");
  if (!(beta > 0.0)) throw Error("beta must be positive");
}

SequencePolicy policy_alignment_exact(const RewardModel& reward, const SequencePolicy& pi_ref, double beta) {
  try {
    return optimal_policy(reward, pi_ref, beta);
  } catch (const Error& e) {
    if (std::string_view(e.what()) != "enumeration too large") throw;
    throw Error(std::string(e.what()) + " (use best_of_n policy mode)");
  }
}

SequencePolicy policy_alignment_bon(const RewardModel& reward, const SequencePolicy& base, int n,
                                    std::uint64_t seed, int draws, double floor) {
  if (n < 2) throw Error("best-of-n requires n >= 2");
  if (draws < 1) throw Error("best-of-n requires at least one draw");
  const Support& s = base.support();
  const std::size_t m = s.completion_count();
  std::vector<double> probs(s.cell_count(), 0.0);
  parallel_for(s.prompt_count(), [&](std::size_t p) {
    std::vector<double> scores(m);
    for (std::size_t c = 0; c < m; ++c) scores[c] = reward.score(p, c);
    for (int d = 0; d < draws; ++d) {
      const auto picks = base.sample_indices(p, static_cast<std::size_t>(n),
                                             derive_seed(seed, p, static_cast<std::uint64_t>(d)));
      std::size_t best = picks.front();
      for (std::size_t c : picks) {
        if (scores[c] > scores[best]) best = c;
      }
      probs[s.cell(p, best)] += 1.0;
    }
    for (std::size_t c = 0; c < m; ++c) probs[s.cell(p, c)] /= static_cast<double>(draws);
  });
  return SequencePolicy::from_probabilities(s, std::move(probs)).with_floor(floor);
}

PreferenceDataset build_synthetic_preferences(const DemonstrationDataset& demos, const SequencePolicy& policy,
                                              int generations_per_demo, PairSelection selection,
                                              std::uint64_t seed, const RewardModel* reward) {
  if (generations_per_demo < 1) throw Error("generations_per_demo must be at least 1");
  const Support& s = policy.support();
  const bool min_select = selection == PairSelection::max_min && reward != nullptr;
  std::vector<Preference> items;
  std::vector<double> weights;
  for (std::size_t i = 0; i < demos.size(); ++i) {
    const auto& demo = demos[i];
    const std::size_t p = s.prompt_index(demo.prompt);
    const std::size_t demo_c = s.completion_index(demo.completion);
    const auto gens = policy.sample_indices(p, static_cast<std::size_t>(generations_per_demo),
                                            derive_seed(seed, i));
    std::vector<std::size_t> kept;
    for (std::size_t c : gens) {
      if (c != demo_c) kept.push_back(c);
    }
    if (kept.empty()) continue;
    if (min_select) {
      std::size_t worst = kept.front();
      for (std::size_t c : kept) {
        if (reward->score(p, c) < reward->score(p, worst)) worst = c;
      }
      kept.assign(1, worst);
    }
    for (std::size_t c : kept) {
      items.push_back({demo.prompt, demo.completion, s.completions().at(c)});
      weights.push_back(demos.weight(i) / static_cast<double>(kept.size()));
    }
  }
  if (items.empty()) throw Error("degenerate: policy reproduces demonstrations exactly");
  if (!demos.is_weighted()) return PreferenceDataset(std::move(items));
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw Error("degenerate: policy reproduces demonstrations exactly");
  for (double& w : weights) w /= total;
  return PreferenceDataset(std::move(items), std::move(weights));
}

namespace {

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw Error(std::string("non-finite ") + what);
}

DemonstrationDataset draw_batch(const DemonstrationDataset& demos, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) return demos;
  std::vector<double> cumulative(demos.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < demos.size(); ++i) {
    acc += demos.weight(i);
    cumulative[i] = acc;
  }
  std::vector<Demonstration> batch;
  batch.reserve(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b) batch.push_back(demos[rng.categorical(cumulative)]);
  return DemonstrationDataset(std::move(batch));
}

std::vector<double> step_params(const RewardModel& reward, const std::vector<double>& grad, double scale) {
  std::vector<double> params(reward.params().begin(), reward.params().end());
  for (std::size_t i = 0; i < params.size(); ++i) params[i] += scale * grad[i];
  return params;
}

RewardStepResult btl_steps(const RewardModel& reward, const DemonstrationDataset& demos,
                           const SequencePolicy& policy, const IrlConfig& config, std::uint64_t seed) {
  RewardStepResult out{reward, {}, std::nullopt};
  for (int step = 0; step < config.reward_steps_per_iter; ++step) {
    const std::uint64_t step_seed = derive_seed(seed, static_cast<std::uint64_t>(step));
    Rng rng(derive_seed(step_seed, 0));
    const DemonstrationDataset batch = draw_batch(demos, config.reward_batch_size, rng);
    const PreferenceDataset prefs = build_synthetic_preferences(
        batch, policy, config.generations_per_demo, config.pair_selection, derive_seed(step_seed, 1), &out.reward);
    const double loss = btl_loss(out.reward, prefs);
    check_finite(loss, "reward-alignment loss");
    out.losses.push_back(loss);
    const auto grad = btl_loss_gradient(out.reward, prefs);
    out.reward = out.reward.with_params(step_params(out.reward, grad, -config.reward_learning_rate));
    if (step + 1 == config.reward_steps_per_iter) {
      out.final_loss = btl_loss(out.reward, prefs);
      check_finite(*out.final_loss, "reward-alignment loss");
    }
  }
  return out;
}

RewardStepResult exact_likelihood_steps(const RewardModel& reward, const DemonstrationDataset& demos,
                                        const SequencePolicy& pi_ref, const IrlConfig& config) {
  RewardStepResult out{reward, {}, std::nullopt};
  double lr = config.reward_learning_rate;
  double current = single_level_surrogate(reward, demos, pi_ref, config.beta);
  check_finite(current, "surrogate");
  for (int step = 0; step < config.reward_steps_per_iter; ++step) {
    out.losses.push_back(-current);
    const auto grad = surrogate_gradient(out.reward, demos, pi_ref, config.beta);
    RewardModel candidate = out.reward.with_params(step_params(out.reward, grad, lr));
    double value = single_level_surrogate(candidate, demos, pi_ref, config.beta);
    if (config.line_search) {
      int halvings = 0;
      while (!(value >= current) && halvings < 60) {
        lr *= 0.5;
        ++halvings;
        candidate = out.reward.with_params(step_params(out.reward, grad, lr));
        value = single_level_surrogate(candidate, demos, pi_ref, config.beta);
      }
      if (!(value >= current)) {
        candidate = out.reward;
        value = current;
      }
    }
    check_finite(value, "surrogate");
    out.reward = std::move(candidate);
    current = value;
  }
  if (config.reward_steps_per_iter > 0) out.final_loss = -current;
  return out;
}

RewardStepResult sampled_likelihood_steps(const RewardModel& reward, const DemonstrationDataset& demos,
                                          const SequencePolicy& policy, const IrlConfig& config,
                                          std::uint64_t seed) {
  const Support& s = policy.support();
  RewardStepResult out{reward, {}, std::nullopt};
  for (int step = 0; step < config.reward_steps_per_iter; ++step) {
    const std::uint64_t step_seed = derive_seed(seed, static_cast<std::uint64_t>(step));
    Rng rng(derive_seed(step_seed, 0));
    const DemonstrationDataset batch = draw_batch(demos, config.reward_batch_size, rng);
    std::vector<Demonstration> generated;
    std::vector<Preference> pairs;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const std::size_t p = s.prompt_index(batch[i].prompt);
      const auto gens = policy.sample_indices(p, static_cast<std::size_t>(config.generations_per_demo),
                                              derive_seed(step_seed, 1, i));
      for (std::size_t c : gens) {
        generated.push_back({batch[i].prompt, s.completions().at(c)});
        if (generated.back().completion != batch[i].completion) {
          pairs.push_back({batch[i].prompt, batch[i].completion, generated.back().completion});
        }
      }
    }
    const DemonstrationDataset generated_batch(std::move(generated));
    const double loss = pairs.empty() ? std::log(2.0) : btl_loss(out.reward, PreferenceDataset(pairs));
    check_finite(loss, "reward-alignment loss");
    out.losses.push_back(loss);
    const auto grad = stochastic_gradient(out.reward, batch, generated_batch);
    out.reward = out.reward.with_params(step_params(out.reward, grad, config.reward_learning_rate));
    if (step + 1 == config.reward_steps_per_iter) {
      out.final_loss = pairs.empty() ? std::log(2.0) : btl_loss(out.reward, PreferenceDataset(pairs));
    }
  }
  return out;
}

}  // namespace

RewardStepResult reward_alignment_step(const RewardModel& reward, const DemonstrationDataset& demos,
                                       const SequencePolicy& policy, const SequencePolicy& pi_ref,
                                       const IrlConfig& config, std::uint64_t seed) {
  if (config.objective == RewardObjective::btl) return btl_steps(reward, demos, policy, config, seed);
  if (config.policy_mode == PolicyMode::exact && config.reward_batch_size == 0) {
    return exact_likelihood_steps(reward, demos, pi_ref, config);
  }
  return sampled_likelihood_steps(reward, demos, policy, config, seed);
}

namespace {

SequencePolicy align(const RewardModel& reward, const SequencePolicy& pi_ref, const IrlConfig& config,
                     std::uint64_t seed) {
  if (config.policy_mode == PolicyMode::exact) return policy_alignment_exact(reward, pi_ref, config.beta);
  return policy_alignment_bon(reward, pi_ref, config.best_of_n, seed, config.best_of_n_draws,
                              config.policy_floor);
}

}  // namespace

IrlResult irl_align(const DemonstrationDataset& demos, const SequencePolicy& pi_ref,
                    const RewardModel& init_reward, const IrlConfig& config,
                    const IrlDiagnostics& diagnostics) {
  config.validate();
  using Clock = std::chrono::steady_clock;
  IrlResult result{init_reward, pi_ref, {}, false, {}};
  try {
    result.policy = align(init_reward, pi_ref, config, derive_seed(config.seed, 0, 0));
  } catch (const Error& e) {
    if (std::string_view(e.what()).rfind("non-finite", 0) != 0) throw;
    result.aborted = true;
    result.abort_reason = e.what();
    return result;
  }
  for (int k = 0; k < config.iterations; ++k) {
    const auto start = Clock::now();
    const auto iter = static_cast<std::uint64_t>(k) + 1;
    const RewardModel& start_reward = config.warm_start_reward ? result.reward : init_reward;
    IterationRecord record;
    record.iteration = k;
    try {
      RewardStepResult step = reward_alignment_step(start_reward, demos, result.policy, pi_ref, config,
                                                    derive_seed(config.seed, iter, 1));
      if (!step.losses.empty()) record.loss_before = step.losses.front();
      record.loss_after = step.final_loss;
      result.reward = std::move(step.reward);
      result.policy = align(result.reward, pi_ref, config, derive_seed(config.seed, iter, 2));
      record.surrogate = single_level_surrogate(result.reward, demos, pi_ref, config.beta);
      check_finite(record.surrogate, "surrogate");
    } catch (const Error& e) {
      const std::string what = e.what();
      if (what.rfind("non-finite", 0) != 0) throw;
      result.aborted = true;
      result.abort_reason = what;
      return result;
    }
    if (diagnostics.instance != nullptr) {
      record.exact_likelihood = exact_likelihood(result.reward, *diagnostics.instance, config.beta);
      record.kl_to_expert = kl_to_expert(result.policy, *diagnostics.instance);
    }
    if (diagnostics.heldout != nullptr) record.reward_accuracy = reward_accuracy(result.reward, *diagnostics.heldout);
    record.wall_time_s = std::chrono::duration<double>(Clock::now() - start).count();
    result.records.push_back(record);
    if (diagnostics.on_iteration) diagnostics.on_iteration(k, result.reward, result.policy);
  }
  return result;
}

}  // namespace mlirl
