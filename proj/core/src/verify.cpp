#include "mlirl/verify.hpp"

#include "mlirl/random.hpp"
#include "mlirl/workbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace mlirl {

std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                       std::span<const double> x, double step) {
  std::vector<double> point(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    point[i] = x[i] + step;
    const double up = f(point);
    point[i] = x[i] - step;
    const double down = f(point);
    point[i] = x[i];
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw Error("gradient sizes differ");
  double diff = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max(scale, std::abs(analytic[i]));
  }
  return diff / (1.0 + scale);
}

namespace {

constexpr double kBetaCycle[] = {0.1, 1.0, 10.0};

std::vector<double> normal_params(std::size_t n, double scale, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out(n);
  for (auto& v : out) v = scale * rng.normal();
  return out;
}

SequencePolicy random_policy(const Support& support, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> logits(support.cell_count());
  for (auto& v : logits) v = 1.5 * rng.normal();
  return SequencePolicy::from_log_weights(support, logits);
}

CheckResult finish(std::string name, double measured, double threshold, std::string detail = {}) {
  return {std::move(name), measured <= threshold, measured, threshold, std::move(detail)};
}

}  // namespace

CheckResult check_gradient(std::uint64_t seed, std::size_t instances, double tolerance) {
  double worst = 0.0;
  for (std::size_t i = 0; i < instances; ++i) {
    InstanceSpec spec;
    spec.vocab = 3;
    spec.horizon = 3;
    spec.prompt_count = 3;
    spec.r_star_kind = RewardFamily::tabular_random;
    spec.r_star_scale = 1.0;
    spec.beta = kBetaCycle[i % 3];
    spec.seed = derive_seed(seed, i, 0);
    const Instance inst = make_instance(spec);
    const DemonstrationDataset demos = sample_demonstrations(inst, 50, derive_seed(seed, i, 1));
    const RewardModel base = RewardModel::tabular(inst.support, inst.reward_bound)
                                 .with_params(normal_params(inst.support.cell_count(), 1.0, derive_seed(seed, i, 2)));
    const auto analytic = surrogate_gradient(base, demos, inst.pi_ref, spec.beta);
    const auto numeric = central_difference(
        [&](std::span<const double> theta) {
          return single_level_surrogate(base.with_params({theta.begin(), theta.end()}), demos, inst.pi_ref, spec.beta);
        },
        base.params());
    worst = std::max(worst, max_relative_error(analytic, numeric));
  }
  return finish("gradient", worst, tolerance, std::to_string(instances) + " instances, step 1e-5");
}

CheckResult check_closed_form(std::uint64_t seed, std::size_t triples, double tolerance) {
  double worst_norm = 0.0;
  double worst_gibbs = 0.0;
  for (std::size_t i = 0; i < triples; ++i) {
    Rng shape(derive_seed(seed, i, 0));
    const int vocab = 2 + static_cast<int>(shape.below(3));
    const int horizon = 1 + static_cast<int>(shape.below(3));
    const std::size_t prompts = 1 + shape.below(4);
    std::vector<TokenSeq> xs;
    for (std::size_t p = 0; p < prompts; ++p) xs.push_back(TokenSeq{static_cast<Token>(p)});
    const Support support(std::make_shared<const PromptSet>(std::move(xs)), CompletionSpace(vocab, horizon));
    const double beta = i % 4 < 3 ? kBetaCycle[i % 4] : std::exp(6.0 * shape.uniform() - 3.0);
    const RewardModel reward = RewardModel::tabular(support, 5.0).with_params(
        normal_params(support.cell_count(), 2.0, derive_seed(seed, i, 1)));
    const SequencePolicy pi_ref = random_policy(support, derive_seed(seed, i, 2));
    const SequencePolicy pi = optimal_policy(reward, pi_ref, beta);
    worst_norm = std::max(worst_norm, pi.normalization_residual());
    worst_gibbs = std::max(worst_gibbs, gibbs_residual(pi, reward.table(), pi_ref, beta));
  }
  char detail[128];
  std::snprintf(detail, sizeof detail, "normalization %.3g, gibbs %.3g over %zu triples", worst_norm, worst_gibbs,
                triples);
  return finish("closed_form", std::max(worst_norm, worst_gibbs), tolerance, detail);
}

CheckResult check_surrogate_identity(std::uint64_t seed, std::size_t thetas, double tolerance) {
  InstanceSpec spec;
  spec.r_star_kind = RewardFamily::tabular_random;
  spec.seed = derive_seed(seed, 0);
  InstanceSpec linear_spec = spec;
  linear_spec.r_star_kind = RewardFamily::linear_random;
  const Instance tabular = make_instance(spec);
  const Instance linear = make_instance(linear_spec);
  double worst = 0.0;
  for (std::size_t i = 0; i < thetas; ++i) {
    const Instance& inst = i % 2 == 0 ? tabular : linear;
    const double beta = kBetaCycle[i % 3];
    const DemonstrationDataset demos = sample_demonstrations(inst, 200, derive_seed(seed, i, 1));
    const RewardModel reward =
        inst.r_star.with_params(normal_params(inst.r_star.param_count(), 1.0, derive_seed(seed, i, 2)));
    const double single = single_level_surrogate(reward, demos, inst.pi_ref, beta);
    const double bilevel = bilevel_surrogate(reward, demos, inst.pi_ref, beta);
    worst = std::max(worst, std::abs(single - bilevel));
  }
  return finish("surrogate_identity", worst, tolerance, std::to_string(thetas) + " theta values");
}

CheckResult check_population_identity(std::uint64_t seed, std::size_t thetas, double tolerance) {
  InstanceSpec spec;
  spec.seed = derive_seed(seed, 0);
  spec.beta = 1.0;
  const Instance inst = make_instance(spec);
  const DemonstrationDataset population = DemonstrationDataset::full_population(inst.pi_expert);
  double worst = 0.0;
  for (std::size_t i = 0; i < thetas; ++i) {
    const RewardModel reward =
        inst.r_star.with_params(normal_params(inst.r_star.param_count(), 1.0, derive_seed(seed, i, 1)));
    worst = std::max(worst, std::abs(single_level_surrogate(reward, population, inst.pi_ref, 1.0) -
                                     exact_likelihood(reward, inst, 1.0)));
  }
  return finish("population_identity", worst, tolerance, std::to_string(thetas) + " theta values");
}

CheckResult check_dpo_btl_identity(std::uint64_t seed, std::size_t items, double tolerance) {
  double worst = 0.0;
  for (std::size_t i = 0; i < items; ++i) {
    Rng rng(derive_seed(seed, i, 0));
    const int vocab = 2 + static_cast<int>(rng.below(3));
    const int horizon = 1 + static_cast<int>(rng.below(3));
    const Support support(std::make_shared<const PromptSet>(std::vector<TokenSeq>{{0}, {1}}),
                          CompletionSpace(vocab, horizon));
    const SequencePolicy pi = random_policy(support, derive_seed(seed, i, 1));
    const SequencePolicy pi_ref = random_policy(support, derive_seed(seed, i, 2));
    const double beta = std::exp(6.0 * rng.uniform() - 3.0);
    const std::size_t n = support.completion_count();
    const std::size_t p = rng.below(2);
    const std::size_t w = rng.below(n);
    std::size_t l = rng.below(n - 1);
    if (l >= w) ++l;
    const PreferenceDataset pref(std::vector<Preference>{
        {support.prompts().prompt(p), support.completions().at(w), support.completions().at(l)}});
    const double dpo = dpo_loss(pi, pi_ref, pref, beta);
    const double btl = btl_loss(implicit_reward(pi, pi_ref, beta), pref);
    worst = std::max(worst, std::abs(dpo - btl));
  }
  return finish("dpo_btl_identity", worst, tolerance, std::to_string(items) + " items");
}

Instance concentration_instance(std::uint64_t seed) {
  InstanceSpec spec;
  spec.vocab = 3;
  spec.horizon = 3;
  spec.prompt_count = 3;
  spec.seed = seed;
  return make_instance(spec);
}

ConcentrationCheck check_concentration(const Instance& instance, std::uint64_t seed,
                                       const std::vector<std::size_t>& sizes, std::size_t trials,
                                       std::size_t theta_samples, double slope_lo, double slope_hi) {
  ConcentrationCheck out;
  out.report = concentration_experiment(instance, theta_samples, sizes, trials, seed);
  const auto& r = out.report;
  bool under_bound = true;
  for (std::size_t i = 0; i < r.sizes.size(); ++i) under_bound = under_bound && r.p90_gap[i] <= r.bound[i];
  std::string detail = "slope in [" + std::to_string(slope_lo) + ", " + std::to_string(slope_hi) + "]";
  char buf[160];
  for (std::size_t i = 0; i < r.sizes.size(); ++i) {
    std::snprintf(buf, sizeof buf, "; n=%zu median %.3g p90 %.3g bound %.3g", r.sizes[i], r.median_gap[i],
                  r.p90_gap[i], r.bound[i]);
    detail += buf;
  }
  out.result = {"concentration", under_bound && r.slope >= slope_lo && r.slope <= slope_hi, r.slope, slope_hi,
                detail};
  return out;
}

std::string format_check(const CheckResult& result) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s %s: measured %.6g (threshold %.3g)", result.passed ? "PASS" : "FAIL",
                result.name.c_str(), result.measured, result.threshold);
  std::string out = buf;
  if (!result.detail.empty()) out += " [" + result.detail + "]";
  return out;
}

}  // namespace mlirl
