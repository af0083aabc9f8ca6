#pragma once

// Demonstration-only baselines: SFT (behavior cloning on tabular softmax
// logits) and SPIN (iterated DPO on demonstration-vs-generation pairs).

#include "mlirl/objectives.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace mlirl {

struct SftConfig {
  int epochs = 2000;
  double learning_rate = 1.0;
  std::size_t batch_size = 0;  // 0 = full batch
  std::uint64_t seed = 0;
  double floor = 1e-6;

  void validate() const;
};

struct SftResult {
  SequencePolicy policy;
  std::vector<double> losses;  // one per optimizer step, before the update
  bool aborted = false;
};

SftResult sft_train(const SequencePolicy& init_policy, const DemonstrationDataset& demos, const SftConfig& config);

struct SpinConfig {
  int iterations = 2;
  double dpo_beta = 0.1;
  int inner_steps = 200;
  double learning_rate = 1.0;
  int generations_per_demo = 1;
  std::uint64_t seed = 0;
  /// DPO reference is the original policy instead of the previous iterate.
  bool fixed_reference = false;
  double floor = 1e-6;

  void validate() const;
};

struct SpinIterationMetrics {
  int iteration = 0;
  double dpo_loss_start = 0.0;
  double dpo_loss_end = 0.0;
  std::optional<double> heldout_demo_loglik;
  std::optional<double> implicit_reward_accuracy;
};

/// One self-play round: pair demos (chosen) with generations of `policy`
/// (rejected) and run `inner_steps` of gradient descent on the DPO loss
/// against `dpo_reference`.
SequencePolicy spin_iteration(const SequencePolicy& policy, const SequencePolicy& dpo_reference,
                              const DemonstrationDataset& demos, const SpinConfig& config, std::uint64_t seed);

struct SpinResult {
  SequencePolicy policy;
  std::vector<SpinIterationMetrics> metrics;
};

struct SpinDiagnostics {
  const DemonstrationDataset* heldout_demos = nullptr;
  const PreferenceDataset* heldout_prefs = nullptr;
  std::function<void(int, const SequencePolicy&)> on_iteration;
};

SpinResult spin_train(const SequencePolicy& init_policy, const DemonstrationDataset& demos,
                      const SpinConfig& config, const SpinDiagnostics& diagnostics = {});

}  // namespace mlirl
