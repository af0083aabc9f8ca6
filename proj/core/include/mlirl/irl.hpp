#pragma once

// Joint reward learning and policy fine-tuning from demonstrations: alternate
// a policy-alignment step (soft policy iteration, exact or best-of-n) with a
// reward-alignment step driven by synthetic demo-vs-generation preferences.

#include "mlirl/objectives.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace mlirl {

enum class PolicyMode { exact, best_of_n };
enum class PairSelection { all, max_min };

/// btl: descend the synthetic-preference loss
///   -E_{(x,y)~D, y'~pi_k}[log sigmoid(r(x,y) - r(x,y'))].
/// likelihood: ascend the surrogate with its gradient (exact when the whole
/// dataset is used under exact policy alignment, sampled otherwise).
enum class RewardObjective { btl, likelihood };

struct IrlConfig {
  int iterations = 3;                  // K
  int reward_steps_per_iter = 100;
  double reward_learning_rate = 5e-3;
  std::size_t reward_batch_size = 64;  // 0 = whole dataset every step
  int generations_per_demo = 1;
  PolicyMode policy_mode = PolicyMode::exact;
  int best_of_n = 32;
  int best_of_n_draws = 512;
  PairSelection pair_selection = PairSelection::all;
  RewardObjective objective = RewardObjective::btl;
  bool line_search = false;            // exact likelihood steps only
  double beta = 0.1;
  std::uint64_t seed = 0;
  bool warm_start_reward = true;
  double policy_floor = 1e-6;          // applied to best-of-n policies

  void validate() const;
};

struct IterationRecord {
  int iteration = 0;
  double surrogate = 0.0;
  std::optional<double> exact_likelihood;
  std::optional<double> loss_before;
  std::optional<double> loss_after;
  std::optional<double> kl_to_expert;
  std::optional<double> reward_accuracy;
  double wall_time_s = 0.0;
};

SequencePolicy policy_alignment_exact(const RewardModel& reward, const SequencePolicy& pi_ref, double beta);

/// Best-of-n rejection policy of `base` under `reward`: per prompt, `draws`
/// times keep the highest-reward of n samples (earliest sample wins ties);
/// returns the induced empirical distribution, floored and renormalized.
SequencePolicy policy_alignment_bon(const RewardModel& reward, const SequencePolicy& base, int n,
                                    std::uint64_t seed, int draws = 512, double floor = 1e-6);

/// For each demonstration, sample `generations_per_demo` completions from
/// `policy` and pair the demonstration (chosen) against them (rejected).
/// Generations equal to the demonstration are dropped.
PreferenceDataset build_synthetic_preferences(const DemonstrationDataset& demos, const SequencePolicy& policy,
                                              int generations_per_demo, PairSelection selection,
                                              std::uint64_t seed, const RewardModel* reward = nullptr);

struct RewardStepResult {
  RewardModel reward;
  std::vector<double> losses;       // loss of each step before its update
  std::optional<double> final_loss; // last step's loss re-evaluated after its update
};

RewardStepResult reward_alignment_step(const RewardModel& reward, const DemonstrationDataset& demos,
                                       const SequencePolicy& policy, const SequencePolicy& pi_ref,
                                       const IrlConfig& config, std::uint64_t seed);

struct IrlDiagnostics {
  const Instance* instance = nullptr;
  const PreferenceDataset* heldout = nullptr;
  /// Called after every iteration with (iteration, reward, aligned policy).
  std::function<void(int, const RewardModel&, const SequencePolicy&)> on_iteration;
};

struct IrlResult {
  RewardModel reward;
  SequencePolicy policy;
  std::vector<IterationRecord> records;
  bool aborted = false;
  std::string abort_reason;
};

IrlResult irl_align(const DemonstrationDataset& demos, const SequencePolicy& pi_ref,
                    const RewardModel& init_reward, const IrlConfig& config,
                    const IrlDiagnostics& diagnostics = {});

}  // namespace mlirl
