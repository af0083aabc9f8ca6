#pragma once

// Instance generation, dataset and instance persistence, experiment configs
// and the metrics table shared by the CLI and the acceptance runner.

#include "mlirl/baselines.hpp"
#include "mlirl/irl.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mlirl {

/// Invalid command-line or config usage, such as an unknown method name.
class UsageError : public Error {
 public:
  using Error::Error;
};

enum class RewardFamily { tabular_random, linear_random };

struct InstanceSpec {
  int vocab = 4;                  // V
  int horizon = 3;                // H
  std::size_t prompt_count = 4;
  std::size_t prompt_length = 2;
  RewardFamily r_star_kind = RewardFamily::linear_random;
  double r_star_scale = 0.3;
  double beta = 1.0;
  double reward_bound = 5.0;      // C_r
  double ref_floor = 1e-6;        // epsilon
  std::size_t feature_dim = 8;    // linear_random only
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const InstanceSpec&) const = default;
};

Instance make_instance(const InstanceSpec& spec);

/// n pairs with prompts ~ mu and completions ~ pi_E.
DemonstrationDataset sample_demonstrations(const Instance& instance, std::size_t n, std::uint64_t seed);

// JSONL datasets. Readers reject unknown fields and report 1-based line
// numbers; every token must be < vocab and completions must have length
// horizon. Demonstrations may carry an optional "weight".
void write_demonstrations(const std::filesystem::path& path, const DemonstrationDataset& demos);
DemonstrationDataset read_demonstrations(const std::filesystem::path& path, int vocab, int horizon);
DemonstrationDataset parse_demonstrations(std::string_view text, int vocab, int horizon);
void write_preferences(const std::filesystem::path& path, const PreferenceDataset& prefs);
PreferenceDataset read_preferences(const std::filesystem::path& path, int vocab, int horizon);
PreferenceDataset parse_preferences(std::string_view text, int vocab, int horizon);

struct LoadedInstance {
  InstanceSpec spec;
  Instance instance;
};

/// instance.json, r_star.json, pi_ref.json, pi_expert.json.
void save_instance(const std::filesystem::path& dir, const InstanceSpec& spec, const Instance& instance);
LoadedInstance load_instance(const std::filesystem::path& dir);

void save_policy(const std::filesystem::path& path, const SequencePolicy& policy);
SequencePolicy load_policy(const std::filesystem::path& path, const Support& support);
void save_reward(const std::filesystem::path& path, const RewardModel& reward);
RewardModel load_reward(const std::filesystem::path& path, const Support& support);

std::string instance_spec_to_json(const InstanceSpec& spec);
InstanceSpec parse_instance_spec(std::string_view text);

enum class IrlRewardKind { tabular, linear };

struct ExperimentConfig {
  InstanceSpec instance;
  std::vector<std::string> methods{"sft", "spin", "irl"};
  std::vector<std::uint64_t> seeds{0};
  std::size_t demos = 200;
  bool full_population_demos = false;
  std::size_t heldout_demos = 2000;
  std::size_t heldout_prefs = 1000;
  std::size_t win_matches = 2000;
  bool record_wall_time = false;
  SftConfig sft;
  SpinConfig spin;
  IrlConfig irl;
  IrlRewardKind irl_reward = IrlRewardKind::linear;

  void validate() const;
};

/// ExperimentConfig{} with the shipped IRL settings: exact likelihood steps
/// on the whole dataset, matched linear reward, beta taken from the instance.
ExperimentConfig default_experiment_config();
ExperimentConfig parse_experiment_config(std::string_view text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
std::string experiment_config_to_json(const ExperimentConfig& config);

struct MetricsRow {
  std::string method;
  int iteration = 0;
  std::uint64_t seed = 0;
  double surrogate = 0.0;
  double exact_likelihood = 0.0;
  double kl_to_expert = 0.0;
  double reward_accuracy = 0.0;
  double gt_score = 0.0;
  double win_rate_vs_ref = 0.0;
  double heldout_demo_loglik = 0.0;
  double wall_time_s = 0.0;

  bool all_finite() const;
};

inline constexpr std::string_view kMetricsHeader =
    "method,iteration,seed,surrogate,exact_likelihood,kl_to_expert,reward_accuracy,gt_score,"
    "win_rate_vs_ref,heldout_demo_loglik,wall_time_s";

/// Header plus one line per row, numbers with 17 significant digits.
std::string format_metrics_csv(const std::vector<MetricsRow>& rows);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);

/// Held-out data every method of one seed is scored against.
struct EvalSets {
  DemonstrationDataset heldout_demos;
  PreferenceDataset heldout_prefs;
};
EvalSets make_eval_sets(const Instance& instance, const ExperimentConfig& config, std::uint64_t seed);

struct MethodOutcome {
  std::vector<MetricsRow> rows;
  SequencePolicy policy;
  std::optional<RewardModel> reward;  // irl only
  bool non_finite = false;
  std::string error;
};

/// Trains one method ("sft", "spin" or "irl") on `train` and scores every
/// iteration. Stops at the first row with a non-finite metric.
MethodOutcome run_method(const std::string& method, const Instance& instance, const DemonstrationDataset& train,
                         const EvalSets& eval, const ExperimentConfig& config, std::uint64_t seed);

/// Scores a fixed policy and reward model as a single "eval" row.
/// surrogate is the reward's single-level surrogate on the held-out demos.
MetricsRow evaluate_policy(const Instance& instance, const SequencePolicy& policy, const RewardModel& reward,
                           const EvalSets& eval, const ExperimentConfig& config, std::uint64_t seed);

struct ExperimentResult {
  std::vector<MetricsRow> rows;
  int exit_code = 0;  // 0 ok, 2 non-finite metric
  std::string summary;
};

/// All methods on one instance for every configured seed.
ExperimentResult run_experiment(const ExperimentConfig& config);

std::string summarize(const std::vector<MetricsRow>& rows);

bool is_known_method(std::string_view method);

}  // namespace mlirl
