#include "mlirl/baselines.hpp"

#include "mlirl/evalx.hpp"
#include "mlirl/irl.hpp"
#include "mlirl/random.hpp"

#include <cmath>

namespace mlirl {

void SftConfig::validate() const {
  if (epochs < 1) throw Error("epochs must be at least 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw Error("learning rate must be non-negative");
}

void SpinConfig::validate() const {
  if (iterations < 1) throw Error("iterations must be at least 1");
  if (!(dpo_beta > 0.0)) throw Error("dpo_beta must be positive");
  if (inner_steps < 0) throw Error("inner_steps must be non-negative");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw Error("learning rate must be non-negative");
  if (generations_per_demo < 1) throw Error("generations_per_demo must be at least 1");
}

namespace {

std::vector<double> logits_of(const SequencePolicy& policy) {
  const auto table = policy.table();
  std::vector<double> z(table.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = std::log(table[i]);
  return z;
}

// Probability rows softmax(z) per prompt.
std::vector<double> softmax_rows(const Support& s, const std::vector<double>& z) {
  std::vector<double> probs(z.size());
  const std::size_t n = s.completion_count();
  for (std::size_t p = 0; p < s.prompt_count(); ++p) {
    const auto row = std::span<const double>(z).subspan(p * n, n);
    const double lse = log_sum_exp(row);
    for (std::size_t c = 0; c < n; ++c) probs[p * n + c] = std::exp(row[c] - lse);
  }
  return probs;
}

// -sum_cells mass * log softmax(z)
double cross_entropy(const Support& s, const std::vector<double>& z, const EmpiricalDistribution& target) {
  const std::size_t n = s.completion_count();
  double loss = 0.0;
  for (std::size_t p = 0; p < s.prompt_count(); ++p) {
    if (target.prompt_mass[p] == 0.0) continue;
    const double lse = log_sum_exp(std::span<const double>(z).subspan(p * n, n));
    for (std::size_t c = 0; c < n; ++c) {
      const double m = target.cell_mass[p * n + c];
      if (m != 0.0) loss -= m * (z[p * n + c] - lse);
    }
  }
  return loss;
}

}  // namespace

SftResult sft_train(const SequencePolicy& init_policy, const DemonstrationDataset& demos, const SftConfig& config) {
  config.validate();
  const Support& s = init_policy.support();
  if (config.learning_rate == 0.0) return {init_policy, {sft_loss(init_policy, demos)}, false};

  std::vector<double> z = logits_of(init_policy);
  const std::size_t n = s.completion_count();
  const EmpiricalDistribution full = empirical_distribution(demos, s);
  Rng rng(config.seed);
  std::vector<double> cumulative;
  if (config.batch_size > 0) {
    double acc = 0.0;
    for (std::size_t i = 0; i < demos.size(); ++i) cumulative.push_back(acc += demos.weight(i));
  }
  const std::size_t steps_per_epoch =
      config.batch_size == 0 ? 1 : (demos.size() + config.batch_size - 1) / config.batch_size;

  SftResult result{init_policy, {}, false};
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      EmpiricalDistribution target = full;
      if (config.batch_size > 0) {
        target = {std::vector<double>(s.cell_count(), 0.0), std::vector<double>(s.prompt_count(), 0.0)};
        const double w = 1.0 / static_cast<double>(config.batch_size);
        for (std::size_t b = 0; b < config.batch_size; ++b) {
          const auto& d = demos[rng.categorical(cumulative)];
          const std::size_t p = s.prompt_index(d.prompt);
          target.cell_mass[s.cell(p, s.completion_index(d.completion))] += w;
          target.prompt_mass[p] += w;
        }
      }
      const double loss = cross_entropy(s, z, target);
      if (!std::isfinite(loss)) {
        result.aborted = true;
        result.policy = SequencePolicy::from_log_weights(s, z).with_floor(config.floor);
        return result;
      }
      result.losses.push_back(loss);
      // d/dz [-sum m log softmax(z)] = prompt_mass * softmax(z) - cell_mass
      const auto probs = softmax_rows(s, z);
      for (std::size_t p = 0; p < s.prompt_count(); ++p) {
        if (target.prompt_mass[p] == 0.0) continue;
        for (std::size_t c = 0; c < n; ++c) {
          const std::size_t k = p * n + c;
          z[k] -= config.learning_rate * (target.prompt_mass[p] * probs[k] - target.cell_mass[k]);
        }
      }
    }
  }
  result.policy = SequencePolicy::from_log_weights(s, z).with_floor(config.floor);
  return result;
}

namespace {

struct SpinStep {
  SequencePolicy policy;
  double loss_start;
  double loss_end;
};

SpinStep run_spin_iteration(const SequencePolicy& policy, const SequencePolicy& dpo_reference,
                            const DemonstrationDataset& demos, const SpinConfig& config, std::uint64_t seed) {
  config.validate();
  const PreferenceDataset prefs = build_synthetic_preferences(demos, policy, config.generations_per_demo,
                                                              PairSelection::all, seed);
  const double start = dpo_loss(policy, dpo_reference, prefs, config.dpo_beta);
  if (config.inner_steps == 0 || config.learning_rate == 0.0) return {policy, start, start};

  const Support& s = policy.support();
  struct Indexed {
    std::size_t chosen;
    std::size_t rejected;
    double ref_margin;
    double weight;
  };
  std::vector<Indexed> items;
  items.reserve(prefs.size());
  for (std::size_t i = 0; i < prefs.size(); ++i) {
    const std::size_t p = s.prompt_index(prefs[i].prompt);
    const std::size_t w = s.cell(p, s.completion_index(prefs[i].chosen));
    const std::size_t l = s.cell(p, s.completion_index(prefs[i].rejected));
    const auto ref = dpo_reference.table();
    items.push_back({w, l, std::log(ref[w]) - std::log(ref[l]), prefs.weight(i)});
  }

  // log pi(y_w) - log pi(y_l) = z_w - z_l, so each item only moves two logits.
  std::vector<double> z = logits_of(policy);
  std::vector<double> grad(z.size());
  for (int step = 0; step < config.inner_steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (const auto& item : items) {
      const double margin = config.dpo_beta * ((z[item.chosen] - z[item.rejected]) - item.ref_margin);
      const double coeff = item.weight * config.dpo_beta * sigmoid(-margin);
      grad[item.chosen] -= coeff;
      grad[item.rejected] += coeff;
    }
    for (std::size_t k = 0; k < z.size(); ++k) z[k] -= config.learning_rate * grad[k];
  }
  SequencePolicy updated = SequencePolicy::from_log_weights(s, z).with_floor(config.floor);
  const double end = dpo_loss(updated, dpo_reference, prefs, config.dpo_beta);
  return {std::move(updated), start, end};
}

}  // namespace

SequencePolicy spin_iteration(const SequencePolicy& policy, const SequencePolicy& dpo_reference,
                              const DemonstrationDataset& demos, const SpinConfig& config, std::uint64_t seed) {
  return run_spin_iteration(policy, dpo_reference, demos, config, seed).policy;
}

SpinResult spin_train(const SequencePolicy& init_policy, const DemonstrationDataset& demos,
                      const SpinConfig& config, const SpinDiagnostics& diagnostics) {
  config.validate();
  SpinResult result{init_policy, {}};
  for (int it = 0; it < config.iterations; ++it) {
    const SequencePolicy& reference = config.fixed_reference ? init_policy : result.policy;
    SpinStep step = run_spin_iteration(result.policy, reference, demos, config,
                                       derive_seed(config.seed, static_cast<std::uint64_t>(it)));
    result.policy = std::move(step.policy);
    SpinIterationMetrics m;
    m.iteration = it;
    m.dpo_loss_start = step.loss_start;
    m.dpo_loss_end = step.loss_end;
    if (diagnostics.heldout_demos) m.heldout_demo_loglik = heldout_loglik(result.policy, *diagnostics.heldout_demos);
    if (diagnostics.heldout_prefs) {
      m.implicit_reward_accuracy =
          reward_accuracy(implicit_reward(result.policy, init_policy, config.dpo_beta), *diagnostics.heldout_prefs);
    }
    result.metrics.push_back(m);
    if (diagnostics.on_iteration) diagnostics.on_iteration(it, result.policy);
  }
  return result;
}

}  // namespace mlirl
