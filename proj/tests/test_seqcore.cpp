#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "mlirl/parallel.hpp"
#include "mlirl/seqcore.hpp"
#include "oracles.hpp"

using namespace mlirl;
using testing_helpers::make_support;
using testing_helpers::random_policy;

namespace {

TEST(EnumerateCompletions, SmallCases) {
  EXPECT_EQ(enumerate_completions(2, 1), (std::vector<TokenSeq>{{0}, {1}}));
  EXPECT_EQ(enumerate_completions(2, 2), (std::vector<TokenSeq>{{0, 0}, {0, 1}, {1, 0}, {1, 1}}));
}

TEST(EnumerateCompletions, CountAndOrderMatchNestedLoops) {
  const auto seqs = enumerate_completions(3, 4);
  ASSERT_EQ(seqs.size(), 81u);
  EXPECT_EQ(std::set<TokenSeq>(seqs.begin(), seqs.end()).size(), 81u);
  const auto expected = oracle::enumerate(3, 4);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    ASSERT_EQ(seqs[i].size(), 4u);
    for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(seqs[i][t], expected[i][t]);
  }
}

TEST(EnumerateCompletions, CapExceeded) {
  try {
    enumerate_completions(10, 7);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "enumeration too large");
  }
  EXPECT_NO_THROW(CompletionSpace(2, 3, 8));
  EXPECT_THROW(CompletionSpace(2, 4, 8), Error);
}

TEST(CompletionSpace, IndexRoundTrip) {
  const CompletionSpace space(4, 3);
  for (std::size_t i = 0; i < space.size(); ++i) EXPECT_EQ(space.index_of(space.at(i)), i);
  EXPECT_EQ(space.index_of(TokenSeq{1, 2, 3}), 1u * 16 + 2 * 4 + 3);
}

TEST(CompletionSpace, Errors) {
  const CompletionSpace space(3, 2);
  try {
    space.index_of(TokenSeq{0, 1, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "horizon mismatch");
  }
  try {
    space.index_of(TokenSeq{0, 3});
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "token out of range");
  }
}

TEST(PromptSet, Validation) {
  EXPECT_THROW(PromptSet(std::vector<TokenSeq>{}), Error);
  EXPECT_THROW(PromptSet(std::vector<TokenSeq>{{0}, {0}}), Error);
  EXPECT_THROW(PromptSet(std::vector<TokenSeq>{{0}, {1}}, {0.5, 0.6}), Error);
  const PromptSet ok(std::vector<TokenSeq>{{0}, {1}}, {0.25, 0.75});
  EXPECT_EQ(ok.index_of(TokenSeq{1}), 1u);
  EXPECT_FALSE(ok.find(TokenSeq{2}).has_value());
  const PromptSet uniform(std::vector<TokenSeq>{{0}, {1}, {2}, {3}});
  double total = 0.0;
  for (double w : uniform.weights()) total += w;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Logprob, UniformPolicy) {
  const auto s = make_support(2, 3);
  const auto policy = SequencePolicy::uniform(s);
  for (const auto& y : enumerate_completions(2, 3)) {
    EXPECT_NEAR(logprob(policy, TokenSeq{0}, y), -3.0 * std::log(2.0), 1e-12);
    EXPECT_NEAR(policy.autoregressive_logprob(TokenSeq{0}, y), -3.0 * std::log(2.0), 1e-12);
  }
}

TEST(Logprob, PointMassIsZero) {
  const auto s = make_support(2, 2, 2);
  const std::vector<std::size_t> picks{3, 1};
  const auto policy = SequencePolicy::point_mass(s, picks);
  EXPECT_EQ(logprob(policy, TokenSeq{0}, TokenSeq{1, 1}), 0.0);
  EXPECT_EQ(logprob(policy, TokenSeq{1}, TokenSeq{0, 1}), 0.0);
}

TEST(Logprob, MatchesEnumeratedTableAndChainRule) {
  const auto s = make_support(3, 3, 2);
  const auto policy = random_policy(s, 11);
  const auto seqs = oracle::enumerate(3, 3);
  for (std::size_t p = 0; p < 2; ++p) {
    const TokenSeq x = s.prompts().prompt(p);
    for (std::size_t c = 0; c < seqs.size(); ++c) {
      const TokenSeq y(std::vector<Token>(seqs[c].begin(), seqs[c].end()));
      EXPECT_NEAR(logprob(policy, x, y), std::log(policy.table()[p * seqs.size() + c]), 1e-12);
      // product of conditionals from prefix sums of the table
      double ar = 0.0;
      for (std::size_t t = 0; t < 3; ++t) {
        double num = 0.0;
        double den = 0.0;
        for (std::size_t k = 0; k < seqs.size(); ++k) {
          bool prefix = true;
          for (std::size_t u = 0; u < t; ++u) prefix = prefix && seqs[k][u] == seqs[c][u];
          if (!prefix) continue;
          const double pk = policy.prob(p, k);
          den += pk;
          if (seqs[k][t] == seqs[c][t]) num += pk;
        }
        ar += std::log(num / den);
      }
      EXPECT_NEAR(policy.autoregressive_logprob(x, y), ar, 1e-12);
    }
  }
}

TEST(Logprob, Errors) {
  const auto s = make_support(2, 2);
  const auto policy = SequencePolicy::uniform(s);
  try {
    logprob(policy, TokenSeq{5}, TokenSeq{0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "prompt not in support");
  }
  try {
    logprob(policy, TokenSeq{0}, TokenSeq{0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "horizon mismatch");
  }
}

TEST(SequencePolicy, AutoregressiveRoundTrip) {
  const auto s = make_support(3, 2, 2);
  const auto policy = random_policy(s, 5);
  const auto rebuilt = SequencePolicy::from_autoregressive_logits(s, policy.autoregressive_logits());
  for (std::size_t i = 0; i < s.cell_count(); ++i) EXPECT_NEAR(rebuilt.table()[i], policy.table()[i], 1e-14);
}

TEST(SequencePolicy, NormalizationValidated) {
  const auto s = make_support(2, 1);
  EXPECT_THROW(SequencePolicy::from_probabilities(s, {0.5, 0.6}), Error);
  EXPECT_THROW(SequencePolicy::from_probabilities(s, {-0.1, 1.1}), Error);
  EXPECT_NO_THROW(SequencePolicy::from_probabilities(s, {0.25, 0.75}));
}

TEST(SequencePolicy, NormalizationPropertyAcrossShapes) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const int vocab = 2 + static_cast<int>(seed % 3);
    const int horizon = 1 + static_cast<int>(seed % 4);
    const auto s = make_support(vocab, horizon, 1 + seed % 3);
    const auto policy = random_policy(s, seed, 4.0);
    for (std::size_t p = 0; p < s.prompt_count(); ++p) {
      double total = 0.0;
      for (double lp : policy.log_probabilities(p)) total += std::exp(lp);
      EXPECT_NEAR(total, 1.0, 1e-10);
    }
    EXPECT_LE(policy.normalization_residual(), 1e-10);
  }
}

TEST(SequencePolicy, FloorRaisesMinimum) {
  const auto s = make_support(2, 2);
  const auto policy = SequencePolicy::from_probabilities(s, {1.0, 0.0, 0.0, 0.0});
  const auto floored = policy.with_floor(1e-6);
  // renormalization can only shrink the floor by the added mass
  EXPECT_GE(floored.min_probability(), 1e-6 / (1.0 + 4e-6));
  EXPECT_GT(floored.min_probability(), 0.0);
  EXPECT_LE(floored.normalization_residual(), 1e-12);
  const auto untouched = SequencePolicy::uniform(s).with_floor(1e-6);
  EXPECT_EQ(untouched.table()[0], 0.25);
  EXPECT_THROW(policy.with_floor(0.3), Error);
}

TEST(Sample, PointMassGivesCopies) {
  const auto s = make_support(3, 2);
  const std::vector<std::size_t> pick{5};
  const auto policy = SequencePolicy::point_mass(s, pick);
  const auto draws = sample(policy, TokenSeq{0}, 50, 9);
  ASSERT_EQ(draws.size(), 50u);
  for (const auto& y : draws) EXPECT_EQ(y, s.completions().at(5));
}

TEST(Sample, DeterministicPerSeed) {
  const auto s = make_support(3, 3);
  const auto policy = random_policy(s, 2);
  EXPECT_EQ(sample(policy, TokenSeq{0}, 100, 42), sample(policy, TokenSeq{0}, 100, 42));
  EXPECT_NE(sample(policy, TokenSeq{0}, 100, 42), sample(policy, TokenSeq{0}, 100, 43));
}

TEST(Sample, EmptyRequest) {
  const auto s = make_support(2, 1);
  try {
    sample(SequencePolicy::uniform(s), TokenSeq{0}, 0, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "empty sample request");
  }
}

TEST(Sample, UniformBinaryFrequency) {
  // 3 sigma of Binomial(1e5, 0.5) / 1e5 is 0.0047
  const auto s = make_support(2, 1);
  const auto draws = sample(SequencePolicy::uniform(s), TokenSeq{0}, 100000, 7);
  double zeros = 0.0;
  for (const auto& y : draws) zeros += y[0] == 0 ? 1.0 : 0.0;
  EXPECT_GE(zeros / 1e5, 0.495);
  EXPECT_LE(zeros / 1e5, 0.505);
}

TEST(Sample, ChiSquareAgainstTable) {
  const auto s = make_support(3, 2);
  const auto policy = random_policy(s, 3);
  const auto idx = policy.sample_indices(0, 20000, 99);
  std::vector<double> counts(s.completion_count(), 0.0);
  for (auto c : idx) counts[c] += 1.0;
  EXPECT_GT(oracle::chi_square_p(counts, oracle::row(policy, 0)), 0.01);
}

TEST(Reward, ScoreValues) {
  const auto s = make_support(2, 2, 2);
  const auto zero = RewardModel::tabular(s, 5.0);
  EXPECT_EQ(reward_score(zero, TokenSeq{0}, TokenSeq{1, 0}), 2.5);
  std::vector<double> big(s.cell_count(), 40.0);
  const auto saturated = zero.with_params(big);
  const double r = saturated.score(0, 0);
  EXPECT_LE(r, 5.0);
  EXPECT_GT(r, 5.0 - 1e-12);
  std::vector<double> grow(s.cell_count(), 0.0);
  double last = 0.0;
  for (double raw : {0.0, 1.0, 2.0, 4.0, 8.0}) {
    grow[0] = raw;
    const double v = zero.with_params(grow).score(0, 0);
    EXPECT_GT(v, last);
    last = v;
  }
  EXPECT_NEAR(zero.with_params({1, 2, 3, 4, 5, 6, 7, 8}).score(1, 2), 5.0 * oracle::sigmoid(7.0), 1e-14);
}

TEST(Reward, LinearZeroParamsIsHalfBound) {
  const auto s = make_support(3, 2, 2);
  const auto features = std::make_shared<const FeatureTable>(FeatureTable::random_normal(s, 4, 1));
  const auto model = RewardModel::linear(features, 5.0);
  for (std::size_t p = 0; p < 2; ++p) {
    for (std::size_t c = 0; c < s.completion_count(); ++c) EXPECT_EQ(model.score(p, c), 2.5);
  }
}

TEST(Reward, LinearMatchesDotProduct) {
  const auto s = make_support(3, 2, 2);
  const auto features = std::make_shared<const FeatureTable>(FeatureTable::random_normal(s, 4, 1));
  const auto model = RewardModel::linear(features, 5.0).with_params({0.3, -0.2, 0.5, 1.0});
  for (std::size_t p = 0; p < 2; ++p) {
    for (std::size_t c = 0; c < s.completion_count(); ++c) {
      const auto phi = features->at(p, c);
      const double raw = 0.3 * phi[0] - 0.2 * phi[1] + 0.5 * phi[2] + 1.0 * phi[3];
      EXPECT_NEAR(model.score(p, c), 5.0 * oracle::sigmoid(raw), 1e-13);
      // d r / d theta_k = C_r sigma'(raw) phi_k
      const auto g = model.gradient(p, c);
      const double slope = 5.0 * oracle::sigmoid(raw) * (1.0 - oracle::sigmoid(raw));
      for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(g[k], slope * phi[k], 1e-13);
    }
  }
}

TEST(Reward, PairNotInTable) {
  const auto s = make_support(2, 2);
  const auto model = RewardModel::tabular(s);
  try {
    reward_score(model, TokenSeq{3}, TokenSeq{0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "pair not in table");
  }
}

TEST(Reward, BoundednessProperty) {
  const auto s = make_support(3, 3, 2);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto model = testing_helpers::random_tabular(s, seed, 10.0);
    const auto table = model.table();
    for (double r : table.values()) {
      EXPECT_GT(r, 0.0);
      EXPECT_LE(r, 5.0);
    }
  }
}

TEST(Parallel, ResultsIndependentOfThreadCount) {
  std::vector<double> one(1000);
  std::vector<double> four(1000);
  set_thread_count(1);
  parallel_for(one.size(), [&](std::size_t i) { one[i] = std::sin(static_cast<double>(i)); });
  set_thread_count(4);
  parallel_for(four.size(), [&](std::size_t i) { four[i] = std::sin(static_cast<double>(i)); });
  set_thread_count(1);
  EXPECT_EQ(one, four);
}

TEST(Parallel, PropagatesExceptions) {
  set_thread_count(3);
  EXPECT_THROW(parallel_for(10, [](std::size_t i) {
                 if (i == 7) throw Error("boom");
               }),
               Error);
  set_thread_count(1);
}

}  // namespace
