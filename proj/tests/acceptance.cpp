// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "mlirl/parallel.hpp"
#include "mlirl/random.hpp"
#include "mlirl/verify.hpp"
#include "mlirl/workbench.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

using namespace mlirl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

int failures = 0;

void criterion(int id, const char* title, double limit_s, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool in_time = secs < limit_s;
  const bool ok = out.passed && in_time;
  if (!ok) ++failures;
  std::printf("[%s] %2d %s: %s (%.2f s, limit %.0f s)\n", ok ? "PASS" : "FAIL", id, title, out.detail.c_str(), secs,
              limit_s);
  std::fflush(stdout);
}

Outcome from_check(const CheckResult& r) { return {r.passed, format_check(r)}; }

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c);
  return buf;
}

// Criterion 4: realizable recovery from the full expert population.
Outcome recovery() {
  const Instance instance = make_instance(InstanceSpec{});
  const auto pop = DemonstrationDataset::full_population(instance.pi_expert);
  IrlConfig cfg = default_experiment_config().irl;
  cfg.iterations = 5;
  cfg.reward_steps_per_iter = 100;
  int steps_needed = -1;
  double kl = 0.0;
  IrlDiagnostics diag;
  diag.on_iteration = [&](int k, const RewardModel&, const SequencePolicy& policy) {
    kl = kl_to_expert(policy, instance);
    if (steps_needed < 0 && kl <= 1e-3) steps_needed = (k + 1) * cfg.reward_steps_per_iter;
  };
  const std::vector<double> zeros(instance.r_star.param_count(), 0.0);
  irl_align(pop, instance.pi_ref, instance.r_star.with_params(zeros), cfg, diag);
  const double start_kl = kl_to_expert(instance.pi_ref, instance);
  return {steps_needed > 0 && steps_needed <= 500,
          fmt("KL(pi_E || pi_ref) %.4g -> KL(pi_E || pi_K) %.3g after 500 steps", start_kl, kl) +
              (steps_needed > 0 ? ", <= 1e-3 after " + std::to_string(steps_needed) + " steps" : ", never <= 1e-3")};
}

struct SeedRun {
  double sft_loglik = 0.0;
  double sft_limit_loglik = 0.0;
  double sft_train_gap = 0.0;
  double irl_loglik = 0.0;
  double spin_accuracy = 0.0;
  double irl_accuracy = 0.0;
};

// One shipped-default experiment per seed; the instance and the demo draw both follow the seed.
std::vector<SeedRun> seed_study() {
  std::vector<SeedRun> runs;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ExperimentConfig cfg = default_experiment_config();
    cfg.instance.seed = seed;
    cfg.seeds = {seed};
    const Instance instance = make_instance(cfg.instance);
    const auto train = sample_demonstrations(instance, cfg.demos, derive_seed(seed, 1));
    const EvalSets eval = make_eval_sets(instance, cfg, seed);
    SeedRun run;
    for (const auto& method : cfg.methods) {
      const MethodOutcome out = run_method(method, instance, train, eval, cfg, seed);
      if (out.non_finite) throw Error(out.error);
      const MetricsRow& last = out.rows.back();
      if (method == "sft") run.sft_loglik = last.heldout_demo_loglik;
      if (method == "spin") run.spin_accuracy = last.reward_accuracy;
      if (method == "irl") {
        run.irl_loglik = last.heldout_demo_loglik;
        run.irl_accuracy = last.reward_accuracy;
      }
    }
    // limit of full-batch SFT: the empirical distribution per prompt, floored
    const auto emp = empirical_distribution(train, instance.support);
    const std::size_t n = instance.support.completion_count();
    std::vector<double> probs(instance.pi_ref.table().begin(), instance.pi_ref.table().end());
    double entropy = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const double mass = emp.prompt_mass[i / n];
      if (mass == 0.0) continue;
      probs[i] = emp.cell_mass[i] / mass;
      if (emp.cell_mass[i] > 0.0) entropy -= emp.cell_mass[i] * std::log(probs[i]);
    }
    const auto limit = SequencePolicy::from_probabilities(instance.support, probs).with_floor(cfg.sft.floor);
    run.sft_limit_loglik = heldout_loglik(limit, eval.heldout_demos);
    SftConfig sft = cfg.sft;
    sft.seed = derive_seed(seed, 4);
    run.sft_train_gap = sft_loss(sft_train(instance.pi_ref, train, sft).policy, train) - entropy;
    runs.push_back(run);
  }
  return runs;
}

Outcome irl_beats_sft(const std::vector<SeedRun>& runs) {
  int wins = 0;
  double gap = 0.0;
  double train_gap = 0.0;
  for (const auto& r : runs) {
    // against both the trained policy and its exact full-convergence limit
    wins += r.irl_loglik >= r.sft_loglik && r.irl_loglik >= r.sft_limit_loglik;
    gap += (r.irl_loglik - r.sft_loglik) / static_cast<double>(runs.size());
    train_gap = std::max(train_gap, r.sft_train_gap);
  }
  return {wins >= 8, std::to_string(wins) + "/10 seeds IRL held-out loglik >= SFT (mean gap " + fmt("%+.4f", gap) +
                         "; SFT train loss within " + fmt("%.2g", train_gap) + " nats of its infimum)"};
}

Outcome accuracy_trend() {
  ExperimentConfig cfg = default_experiment_config();
  cfg.methods = {"irl"};
  const ExperimentResult res = run_experiment(cfg);
  if (res.exit_code != 0) return {false, "experiment failed"};
  std::string trace;
  bool monotone = true;
  for (std::size_t i = 0; i < res.rows.size(); ++i) {
    trace += (i ? " -> " : "") + fmt("%.3f", res.rows[i].reward_accuracy);
    if (i > 0 && res.rows[i].reward_accuracy < res.rows[i - 1].reward_accuracy - 0.02) monotone = false;
  }
  const double final_acc = res.rows.back().reward_accuracy;
  return {res.rows.size() == 3 && monotone && final_acc >= 0.6,
          "accuracy " + trace + (monotone ? " (non-decreasing within 0.02)" : " (drops by more than 0.02)")};
}

Outcome irl_beats_spin(const std::vector<SeedRun>& runs) {
  int wins = 0;
  double irl = 0.0;
  double spin = 0.0;
  for (const auto& r : runs) {
    wins += r.irl_accuracy > r.spin_accuracy;
    irl += r.irl_accuracy / static_cast<double>(runs.size());
    spin += r.spin_accuracy / static_cast<double>(runs.size());
  }
  return {wins >= 8, std::to_string(wins) + "/10 seeds IRL reward accuracy > SPIN implicit (mean " +
                         fmt("%.3f vs %.3f", irl, spin) + ")"};
}

Outcome concentration() {
  const auto check = check_concentration(concentration_instance(1), 1);
  std::string gaps;
  for (std::size_t i = 0; i < check.report.sizes.size(); ++i) {
    gaps += " n=" + std::to_string(check.report.sizes[i]) + ":" + fmt("%.3g/%.3g", check.report.p90_gap[i], check.report.bound[i]);
  }
  return {check.result.passed, format_check(check.result) + "; p90/bound" + gaps};
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome reproducibility() {
  const fs::path dir = fs::temp_directory_path() / "mlirl_acceptance";
  fs::create_directories(dir);
  ExperimentConfig cfg = default_experiment_config();
  cfg.seeds = {0, 1};
  set_thread_count(1);
  write_metrics_csv(dir / "a.csv", run_experiment(cfg).rows);
  set_thread_count(4);
  write_metrics_csv(dir / "b.csv", run_experiment(cfg).rows);
  set_thread_count(1);
  const std::string a = slurp(dir / "a.csv");
  const std::string b = slurp(dir / "b.csv");
  return {!a.empty() && a == b, std::to_string(a.size()) + " bytes, 1 vs 4 threads " + (a == b ? "identical" : "differ")};
}

}  // namespace

int main() {
  std::vector<SeedRun> runs;
  criterion(1, "gradient correctness", 60, [] { return from_check(check_gradient(1)); });
  criterion(2, "closed-form policy", 60, [] { return from_check(check_closed_form(1)); });
  criterion(3, "dual-path surrogate identity", 60, [] { return from_check(check_surrogate_identity(1)); });
  criterion(4, "MLE recovery", 300, recovery);
  criterion(5, "IRL beats SFT on finite data", 600, [&] {
    runs = seed_study();
    return irl_beats_sft(runs);
  });
  criterion(6, "reward-accuracy trend", 600, accuracy_trend);
  criterion(7, "IRL reward beats SPIN implicit reward", 900, [&] {
    if (runs.empty()) runs = seed_study();
    return irl_beats_spin(runs);
  });
  criterion(8, "concentration rate", 600, concentration);
  criterion(9, "DPO/BTL implicit-reward identity", 10, [] { return from_check(check_dpo_btl_identity(1)); });
  criterion(10, "end-to-end reproducibility", 600, reproducibility);
  std::printf("%s: %d of 10 criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
