// mlirl command-line driver.

#include "mlirl/parallel.hpp"
#include "mlirl/random.hpp"
#include "mlirl/verify.hpp"
#include "mlirl/workbench.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace mlirl;

namespace {

constexpr int kExitError = 1;
constexpr int kExitNonFinite = 2;
constexpr int kExitUsage = 64;

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::size_t threads = 1;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int cmd_gen(const Globals& g, const fs::path& spec_path, const fs::path& out, std::size_t demos,
            std::size_t prefs) {
  const InstanceSpec spec = parse_instance_spec(read_text(spec_path));
  const Instance instance = make_instance(spec);
  fs::create_directories(out);
  save_instance(out, spec, instance);
  write_demonstrations(out / "demos.jsonl", sample_demonstrations(instance, demos, derive_seed(g.seed, 1)));
  write_preferences(out / "prefs.jsonl", make_heldout_preferences(instance, prefs, derive_seed(g.seed, 3)));
  std::cout << "instance written to " << out.string() << " (C_p = " << instance.log_ref_floor << ")\n";
  return 0;
}

int cmd_train(const Globals& g, const std::string& method, const fs::path& instance_dir, const fs::path& demos_path,
              const std::optional<fs::path>& config_path, const fs::path& out) {
  ExperimentConfig config = config_path ? load_experiment_config(*config_path) : default_experiment_config();
  const LoadedInstance loaded = load_instance(instance_dir);
  const Instance& instance = loaded.instance;
  const DemonstrationDataset train = read_demonstrations(demos_path, instance.vocab(), instance.horizon());
  for (const auto& d : train.items()) {
    if (!instance.prompts().find(d.prompt)) throw Error(demos_path.string() + ": prompt not in the instance");
  }
  const std::uint64_t seed = g.seed_given ? g.seed : config.seeds.front();
  const EvalSets eval = make_eval_sets(instance, config, seed);
  MethodOutcome outcome = run_method(method, instance, train, eval, config, seed);

  fs::create_directories(out);
  write_metrics_csv(out / "metrics.csv", outcome.rows);
  save_policy(out / "policy.json", outcome.policy);
  if (outcome.reward) save_reward(out / "reward.json", *outcome.reward);
  std::string summary = summarize(outcome.rows);
  if (outcome.non_finite) summary += "error: " + outcome.error + "\n";
  write_text(out / "summary.txt", summary);
  std::cout << summary;
  return outcome.non_finite ? kExitNonFinite : 0;
}

int cmd_eval(const Globals& g, const fs::path& instance_dir, const fs::path& policy_path,
             const fs::path& reward_path, const std::optional<fs::path>& config_path, const fs::path& out) {
  const ExperimentConfig config = config_path ? load_experiment_config(*config_path) : default_experiment_config();
  const LoadedInstance loaded = load_instance(instance_dir);
  const Instance& instance = loaded.instance;
  const SequencePolicy policy = load_policy(policy_path, instance.support);
  const RewardModel reward = load_reward(reward_path, instance.support);
  const std::uint64_t seed = g.seed_given ? g.seed : config.seeds.front();
  const MetricsRow row = evaluate_policy(instance, policy, reward, make_eval_sets(instance, config, seed), config, seed);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_metrics_csv(out, {row});
  std::cout << summarize({row});
  return row.all_finite() ? 0 : kExitNonFinite;
}

int cmd_run(const Globals& g, const fs::path& config_path, const fs::path& out) {
  ExperimentConfig config = load_experiment_config(config_path);
  if (g.seed_given) config.seeds = {g.seed};
  const ExperimentResult result = run_experiment(config);
  fs::create_directories(out);
  write_metrics_csv(out / "metrics.csv", result.rows);
  write_text(out / "summary.txt", result.summary);
  write_text(out / "config.json", experiment_config_to_json(config));
  std::cout << result.summary;
  return result.exit_code;
}

int cmd_verify(const Globals& g, const std::string& what) {
  std::vector<CheckResult> results;
  if (what == "gradient") {
    results.push_back(check_gradient(g.seed));
  } else if (what == "identities") {
    results.push_back(check_closed_form(g.seed));
    results.push_back(check_surrogate_identity(g.seed));
    results.push_back(check_population_identity(g.seed));
    results.push_back(check_dpo_btl_identity(g.seed));
  } else {
    results.push_back(check_concentration(concentration_instance(g.seed), g.seed).result);
  }
  bool ok = true;
  for (const auto& r : results) {
    std::cout << format_check(r) << "\n";
    ok = ok && r.passed;
  }
  return ok ? 0 : kExitError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Maximum-likelihood inverse RL from demonstrations on exact synthetic sequence instances"};
  app.fallthrough();
  Globals g;
  bool dump_defaults = false;
  auto* seed_opt = app.add_option("--seed", g.seed, "Seed (overrides the config's seed list)");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--dump-defaults", dump_defaults, "Print the default experiment config and exit");

  fs::path spec_path, out_dir, instance_dir, demos_path, policy_path, reward_path, config_path, out_csv;
  std::size_t gen_demos = 200;
  std::size_t gen_prefs = 1000;
  auto* gen = app.add_subcommand("gen", "Generate an instance directory with demos.jsonl and prefs.jsonl");
  gen->add_option("--spec", spec_path, "Instance spec JSON")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--demos", gen_demos, "Number of demonstrations")->check(CLI::PositiveNumber);
  gen->add_option("--prefs", gen_prefs, "Number of judge-labeled preferences")->check(CLI::PositiveNumber);

  std::map<std::string, CLI::App*> trainers;
  std::map<std::string, CLI::Option*> train_configs;
  for (const char* method : {"sft", "spin", "irl"}) {
    auto* sub = app.add_subcommand(method, std::string("Train ") + method + " on an instance and demonstrations");
    sub->add_option("--instance", instance_dir, "Instance directory")->required()->check(CLI::ExistingDirectory);
    sub->add_option("--demos", demos_path, "demos.jsonl")->required()->check(CLI::ExistingFile);
    train_configs[method] = sub->add_option("--config", config_path, "Experiment config JSON")->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "Output directory")->required();
    trainers[method] = sub;
  }

  auto* eval = app.add_subcommand("eval", "Score a policy and reward model against the instance judge");
  eval->add_option("--instance", instance_dir, "Instance directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--policy", policy_path, "Policy JSON")->required()->check(CLI::ExistingFile);
  eval->add_option("--reward", reward_path, "Reward JSON")->required()->check(CLI::ExistingFile);
  auto* eval_config = eval->add_option("--config", config_path, "Experiment config JSON")->check(CLI::ExistingFile);
  eval->add_option("--out", out_csv, "Metrics CSV")->required();

  auto* run = app.add_subcommand("run", "Run every configured method and seed");
  run->add_option("--config", config_path, "Experiment config JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Output directory")->required();

  std::string check;
  auto* verify = app.add_subcommand("verify", "Numerical self-checks");
  verify->add_option("check", check, "gradient | concentration | identities")
      ->required()
      ->check(CLI::IsMember({"gradient", "concentration", "identities"}));

  app.require_subcommand(0, 1);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  if (dump_defaults) {
    std::cout << experiment_config_to_json(default_experiment_config());
    return 0;
  }
  g.seed_given = seed_opt->count() > 0;
  set_thread_count(g.threads);

  auto optional_path = [&](CLI::Option* opt) -> std::optional<fs::path> {
    if (opt->count() == 0) return std::nullopt;
    return config_path;
  };

  try {
    if (gen->parsed()) return cmd_gen(g, spec_path, out_dir, gen_demos, gen_prefs);
    for (const auto& [method, sub] : trainers) {
      if (sub->parsed()) {
        return cmd_train(g, method, instance_dir, demos_path, optional_path(train_configs[method]), out_dir);
      }
    }
    if (eval->parsed()) return cmd_eval(g, instance_dir, policy_path, reward_path, optional_path(eval_config), out_csv);
    if (run->parsed()) return cmd_run(g, config_path, out_dir);
    if (verify->parsed()) return cmd_verify(g, check);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  std::cerr << app.help();
  return kExitUsage;
}
