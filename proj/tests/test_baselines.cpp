#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "mlirl/baselines.hpp"
#include "mlirl/evalx.hpp"
#include "mlirl/irl.hpp"
#include "mlirl/workbench.hpp"

using namespace mlirl;

namespace {

Instance baseline_instance(std::uint64_t seed) {
  InstanceSpec spec;
  spec.vocab = 3;
  spec.horizon = 2;
  spec.prompt_count = 2;
  spec.r_star_kind = RewardFamily::tabular_random;
  spec.r_star_scale = 1.0;
  spec.ref_floor = 1e-3;
  spec.seed = seed;
  return make_instance(spec);
}

double max_tv(const SequencePolicy& a, const SequencePolicy& b) {
  double worst = 0.0;
  for (std::size_t p = 0; p < a.support().prompt_count(); ++p) {
    double tv = 0.0;
    for (std::size_t c = 0; c < a.support().completion_count(); ++c) tv += 0.5 * std::abs(a.prob(p, c) - b.prob(p, c));
    worst = std::max(worst, tv);
  }
  return worst;
}

TEST(Sft, ConvergesToPopulation) {
  const auto inst = baseline_instance(1);
  const auto pop = DemonstrationDataset::full_population(inst.pi_expert);
  SftConfig c;
  c.epochs = 20000;
  c.learning_rate = 4.0;
  const auto res = sft_train(inst.pi_ref, pop, c);
  EXPECT_LE(max_tv(res.policy, inst.pi_expert), 1e-6);
  for (std::size_t i = 1; i < res.losses.size(); ++i) EXPECT_LE(res.losses[i], res.losses[i - 1] + 1e-12);
}

TEST(Sft, ZeroLearningRate) {
  const auto inst = baseline_instance(2);
  const auto demos = sample_demonstrations(inst, 30, 1);
  SftConfig c;
  c.learning_rate = 0.0;
  const auto res = sft_train(inst.pi_ref, demos, c);
  EXPECT_TRUE(std::equal(res.policy.table().begin(), res.policy.table().end(), inst.pi_ref.table().begin()));
}

TEST(Sft, SingleDemoApproachesFlooredPointMass) {
  const auto inst = baseline_instance(3);
  const auto& s = inst.support;
  const DemonstrationDataset one({{s.prompts().prompt(0), s.completions().at(4)}});
  SftConfig c;
  c.floor = 1e-4;
  const auto res = sft_train(inst.pi_ref, one, c);
  const double n = static_cast<double>(s.completion_count());
  EXPECT_GT(res.policy.prob(0, 4), 0.99);
  // the floored categorical MLE puts floor / (1 + n floor) on each other cell at best
  for (std::size_t y = 0; y < s.completion_count(); ++y) {
    if (y != 4) EXPECT_GE(res.policy.prob(0, y), c.floor / (1.0 + n * c.floor) * (1.0 - 1e-9));
  }
  // prompts absent from D keep their starting row
  for (std::size_t y = 0; y < s.completion_count(); ++y) EXPECT_NEAR(res.policy.prob(1, y), inst.pi_ref.prob(1, y), 1e-12);
}

TEST(Sft, MinibatchIsDeterministic) {
  const auto inst = baseline_instance(4);
  const auto demos = sample_demonstrations(inst, 40, 1);
  SftConfig c;
  c.epochs = 20;
  c.batch_size = 8;
  c.seed = 5;
  const auto a = sft_train(inst.pi_ref, demos, c);
  const auto b = sft_train(inst.pi_ref, demos, c);
  EXPECT_EQ(a.losses, b.losses);
  EXPECT_TRUE(std::equal(a.policy.table().begin(), a.policy.table().end(), b.policy.table().begin()));
}

TEST(Spin, NoInnerStepsReturnsInput) {
  const auto inst = baseline_instance(5);
  const auto demos = sample_demonstrations(inst, 30, 1);
  SpinConfig c;
  c.inner_steps = 0;
  const auto out = spin_iteration(inst.pi_ref, inst.pi_ref, demos, c, 3);
  EXPECT_TRUE(std::equal(out.table().begin(), out.table().end(), inst.pi_ref.table().begin()));
}

TEST(Spin, FirstIterationStartsAtLn2AndImprovesDemos) {
  const auto inst = baseline_instance(6);
  const auto demos = sample_demonstrations(inst, 100, 1);
  SpinConfig c;
  c.iterations = 1;
  const auto res = spin_train(inst.pi_ref, demos, c);
  ASSERT_EQ(res.metrics.size(), 1u);
  EXPECT_NEAR(res.metrics[0].dpo_loss_start, std::log(2.0), 1e-15);
  EXPECT_LT(res.metrics[0].dpo_loss_end, res.metrics[0].dpo_loss_start);
  EXPECT_GT(-sft_loss(res.policy, demos), -sft_loss(inst.pi_ref, demos));
}

TEST(Spin, SingleIterationMatchesSpinIteration) {
  const auto inst = baseline_instance(7);
  const auto demos = sample_demonstrations(inst, 50, 1);
  SpinConfig c;
  c.iterations = 1;
  c.seed = 9;
  const auto trained = spin_train(inst.pi_ref, demos, c);
  const auto direct = spin_iteration(inst.pi_ref, inst.pi_ref, demos, c, derive_seed(9, 0));
  EXPECT_TRUE(std::equal(trained.policy.table().begin(), trained.policy.table().end(), direct.table().begin()));
}

TEST(Spin, DeterministicMetrics) {
  const auto inst = baseline_instance(8);
  const auto demos = sample_demonstrations(inst, 50, 1);
  const auto heldout_demos = sample_demonstrations(inst, 200, 2);
  const auto heldout_prefs = make_heldout_preferences(inst, 200, 3);
  SpinConfig c;
  c.iterations = 2;
  const SpinDiagnostics diag{&heldout_demos, &heldout_prefs, {}};
  const auto a = spin_train(inst.pi_ref, demos, c, diag);
  const auto b = spin_train(inst.pi_ref, demos, c, diag);
  ASSERT_EQ(a.metrics.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(a.metrics[i].dpo_loss_start, b.metrics[i].dpo_loss_start);
    EXPECT_EQ(a.metrics[i].dpo_loss_end, b.metrics[i].dpo_loss_end);
    EXPECT_EQ(a.metrics[i].heldout_demo_loglik, b.metrics[i].heldout_demo_loglik);
    EXPECT_EQ(a.metrics[i].implicit_reward_accuracy, b.metrics[i].implicit_reward_accuracy);
  }
}

TEST(Spin, ImplicitRewardPrefersDemosOverReferenceSamples) {
  const auto inst = baseline_instance(9);
  const auto demos = sample_demonstrations(inst, 200, 1);
  SpinConfig c;
  const auto res = spin_train(inst.pi_ref, demos, c);
  const auto fresh = sample_demonstrations(inst, 500, 11);
  const auto pairs = build_synthetic_preferences(fresh, inst.pi_ref, 1, PairSelection::all, 12);
  EXPECT_GT(reward_accuracy(implicit_reward(res.policy, inst.pi_ref, c.dpo_beta), pairs), 0.5);
}

TEST(Spin, DpoIdentityAlongTraining) {
  const auto inst = baseline_instance(10);
  const auto demos = sample_demonstrations(inst, 60, 1);
  const auto pairs = build_synthetic_preferences(demos, inst.pi_ref, 1, PairSelection::all, 2);
  SpinConfig c;
  c.iterations = 2;
  SpinDiagnostics diag;
  diag.on_iteration = [&](int, const SequencePolicy& policy) {
    EXPECT_NEAR(dpo_loss(policy, inst.pi_ref, pairs, c.dpo_beta),
                btl_loss(implicit_reward(policy, inst.pi_ref, c.dpo_beta), pairs), 1e-12);
  };
  spin_train(inst.pi_ref, demos, c, diag);
}

TEST(BaselineConfigs, Validation) {
  SftConfig sft;
  sft.epochs = 0;
  EXPECT_THROW(sft.validate(), Error);
  SpinConfig spin;
  spin.dpo_beta = 0.0;
  EXPECT_THROW(spin.validate(), Error);
  spin = SpinConfig{};
  spin.iterations = 0;
  EXPECT_THROW(spin.validate(), Error);
}

}  // namespace
