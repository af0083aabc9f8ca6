#include "mlirl/evalx.hpp"

#include "mlirl/parallel.hpp"
#include "mlirl/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

namespace mlirl {

namespace {

template <class Scorer>
double accuracy_with(const Scorer& score, const PreferenceDataset& heldout) {
  // unweighted sets count half-wins in integers so 1.0 and 0.5 come out exact
  double credit = 0.0;
  double mass = 0.0;
  for (std::size_t i = 0; i < heldout.size(); ++i) {
    const auto& item = heldout[i];
    const double chosen = score(item.prompt, item.chosen);
    const double rejected = score(item.prompt, item.rejected);
    const double halves = chosen > rejected ? 2.0 : (chosen == rejected ? 1.0 : 0.0);
    const double w = heldout.is_weighted() ? heldout.weight(i) : 1.0;
    credit += w * halves;
    mass += 2.0 * w;
  }
  return std::clamp(credit / mass, 0.0, 1.0);
}

std::vector<double> prompt_cumulative(const PromptSet& prompts) {
  std::vector<double> cumulative(prompts.size());
  std::partial_sum(prompts.weights().begin(), prompts.weights().end(), cumulative.begin());
  return cumulative;
}

double quantile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

}  // namespace

double reward_accuracy(const RewardTable& reward, const PreferenceDataset& heldout) {
  return accuracy_with([&](const TokenSeq& x, const TokenSeq& y) { return reward.score(x, y); }, heldout);
}

double reward_accuracy(const RewardModel& reward, const PreferenceDataset& heldout) {
  return accuracy_with([&](const TokenSeq& x, const TokenSeq& y) { return reward.score(x, y); }, heldout);
}

PreferenceDataset make_heldout_preferences(const Instance& instance, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw Error("held-out preference set must be nonempty");
  const Support& s = instance.support;
  const auto mu = prompt_cumulative(s.prompts());
  Rng rng(seed);
  auto draw = [&](std::size_t p) {
    const SequencePolicy& source = rng.uniform() < 0.5 ? instance.pi_ref : instance.pi_expert;
    return rng.categorical(source.cumulative(p));
  };
  std::vector<Preference> items;
  items.reserve(n);
  std::size_t attempts = 0;
  while (items.size() < n) {
    if (++attempts > 1000 * n + 1000) throw Error("cannot build held-out preferences: judge ties everywhere");
    const std::size_t p = rng.categorical(mu);
    const std::size_t a = draw(p);
    const std::size_t b = draw(p);
    if (a == b) continue;
    const double ra = instance.r_star.score(p, a);
    const double rb = instance.r_star.score(p, b);
    if (ra == rb) continue;
    const std::size_t chosen = ra > rb ? a : b;
    const std::size_t rejected = ra > rb ? b : a;
    items.push_back({s.prompts().prompt(p), s.completions().at(chosen), s.completions().at(rejected)});
  }
  return PreferenceDataset(std::move(items));
}

double ground_truth_score(const SequencePolicy& policy, const RewardModel& r_star, std::size_t n_samples,
                          std::uint64_t seed) {
  if (n_samples == 0) throw Error("n_samples must be at least 1");
  if (!(policy.support() == r_star.support())) throw Error("policy and judge must share a support");
  const Support& s = policy.support();
  std::vector<double> per_prompt(s.prompt_count());
  parallel_for(s.prompt_count(), [&](std::size_t p) {
    double acc = 0.0;
    for (std::size_t c : policy.sample_indices(p, n_samples, derive_seed(seed, p))) acc += r_star.score(p, c);
    per_prompt[p] = acc / static_cast<double>(n_samples);
  });
  double total = 0.0;
  for (std::size_t p = 0; p < s.prompt_count(); ++p) total += s.prompts().weight(p) * per_prompt[p];
  return total;
}

double ground_truth_score_exact(const SequencePolicy& policy, const RewardModel& r_star) {
  if (!(policy.support() == r_star.support())) throw Error("policy and judge must share a support");
  const Support& s = policy.support();
  double total = 0.0;
  for (std::size_t p = 0; p < s.prompt_count(); ++p) {
    double acc = 0.0;
    for (std::size_t c = 0; c < s.completion_count(); ++c) acc += policy.prob(p, c) * r_star.score(p, c);
    total += s.prompts().weight(p) * acc;
  }
  return total;
}

namespace {
constexpr std::uint64_t kMirrorMask = 0x8000000000000000ULL;
}  // namespace

std::uint64_t mirror_seed(std::uint64_t seed) { return seed ^ kMirrorMask; }

double win_rate(const SequencePolicy& policy_a, const SequencePolicy& policy_b, const RewardModel& r_star,
                std::size_t n_matches, std::uint64_t seed) {
  if (n_matches == 0) throw Error("n_matches must be at least 1");
  if (!(policy_a.support() == r_star.support()) || !(policy_b.support() == r_star.support())) {
    throw Error("policies and judge must share a support");
  }
  const Support& s = r_star.support();
  const auto mu = prompt_cumulative(s.prompts());
  const std::uint64_t shared = std::min(seed, mirror_seed(seed));
  std::vector<double> credit(n_matches);
  parallel_for(n_matches, [&](std::size_t m) {
    Rng prompt_rng(derive_seed(shared, m, 0));
    const std::size_t p = prompt_rng.categorical(mu);
    Rng first(derive_seed(seed, m, 1));
    Rng second(derive_seed(mirror_seed(seed), m, 1));
    const double ra = r_star.score(p, first.categorical(policy_a.cumulative(p)));
    const double rb = r_star.score(p, second.categorical(policy_b.cumulative(p)));
    credit[m] = ra > rb ? 1.0 : (ra == rb ? 0.5 : 0.0);
  });
  double wins = 0.0;
  for (double c : credit) wins += c;
  return wins / static_cast<double>(n_matches);
}

double kl_to_expert(const SequencePolicy& policy, const Instance& instance) {
  return expected_kl(instance.pi_expert, policy);
}

double heldout_loglik(const SequencePolicy& policy, const DemonstrationDataset& demos) {
  return -sft_loss(policy, demos);
}

double concentration_bound(double reward_bound, double log_ref_floor, std::size_t n, double delta) {
  if (n == 0) throw Error("dataset size must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw Error("delta must lie in (0, 1)");
  return (reward_bound - log_ref_floor) * std::sqrt(std::log(2.0 / delta) / (2.0 * static_cast<double>(n)));
}

std::pair<double, double> fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error("line fit needs at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw Error("line fit needs distinct x values");
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

DemonstrationDataset sample_from_policy(const SequencePolicy& policy, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw Error("demonstration count must be at least 1");
  const Support& s = policy.support();
  const auto mu = prompt_cumulative(s.prompts());
  Rng rng(seed);
  std::vector<Demonstration> items;
  items.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t p = rng.categorical(mu);
    const std::size_t c = rng.categorical(policy.cumulative(p));
    items.push_back({s.prompts().prompt(p), s.completions().at(c)});
  }
  return DemonstrationDataset(std::move(items));
}

ConcentrationReport concentration_experiment(const Instance& instance, std::size_t theta_samples,
                                             const std::vector<std::size_t>& sizes, std::size_t trials,
                                             std::uint64_t seed, double delta) {
  if (theta_samples == 0 || trials == 0 || sizes.empty()) throw Error("concentration study needs work to do");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] == 0 || (i > 0 && sizes[i] <= sizes[i - 1])) throw Error("sizes must be strictly increasing");
  }
  ConcentrationReport report;
  report.sizes = sizes;
  report.trials = trials;
  report.theta_samples = theta_samples;
  report.delta = delta;
  report.reward_bound = instance.reward_bound;
  report.log_ref_floor = instance.log_ref_floor;

  std::vector<RewardModel> thetas;
  std::vector<double> likelihoods;
  for (std::size_t t = 0; t < theta_samples; ++t) {
    Rng rng(derive_seed(seed, t, 0));
    std::vector<double> params(instance.support.cell_count());
    for (auto& v : params) v = rng.normal();
    thetas.push_back(RewardModel::tabular(instance.support, instance.reward_bound).with_params(std::move(params)));
    likelihoods.push_back(exact_likelihood(thetas.back(), instance, 1.0));
  }

  const std::size_t per_size = theta_samples * trials;
  std::vector<double> gaps(sizes.size() * per_size);
  parallel_for(gaps.size(), [&](std::size_t job) {
    const std::size_t size_index = job / per_size;
    const std::size_t t = (job % per_size) / trials;
    const std::size_t trial = job % trials;
    const DemonstrationDataset demos = sample_from_policy(
        instance.pi_expert, sizes[size_index], derive_seed(derive_seed(seed, t, 1), size_index, trial));
    gaps[job] = std::abs(likelihoods[t] - single_level_surrogate(thetas[t], demos, instance.pi_ref, 1.0));
  });

  std::vector<double> log_sizes;
  std::vector<double> log_medians;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    std::vector<double> slice(gaps.begin() + static_cast<std::ptrdiff_t>(i * per_size),
                              gaps.begin() + static_cast<std::ptrdiff_t>((i + 1) * per_size));
    report.median_gap.push_back(quantile(slice, 0.5));
    report.p90_gap.push_back(quantile(slice, 0.9));
    report.bound.push_back(concentration_bound(instance.reward_bound, instance.log_ref_floor, sizes[i], delta));
    log_sizes.push_back(std::log(static_cast<double>(sizes[i])));
    log_medians.push_back(std::log(report.median_gap.back()));
  }
  if (sizes.size() >= 2) std::tie(report.slope, report.intercept) = fit_line(log_sizes, log_medians);
  return report;
}

}  // namespace mlirl
