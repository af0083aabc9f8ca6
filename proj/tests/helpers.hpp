#pragma once

#include "mlirl/random.hpp"
#include "mlirl/seqcore.hpp"

#include <memory>
#include <vector>

namespace testing_helpers {

/// Prompts {0}, {1}, ... with uniform weights.
inline mlirl::Support make_support(int vocab, int horizon, std::size_t prompts = 1) {
  std::vector<mlirl::TokenSeq> xs;
  for (std::size_t p = 0; p < prompts; ++p) xs.push_back(mlirl::TokenSeq{static_cast<mlirl::Token>(p)});
  return mlirl::Support(std::make_shared<const mlirl::PromptSet>(std::move(xs)),
                        mlirl::CompletionSpace(vocab, horizon));
}

inline mlirl::SequencePolicy random_policy(const mlirl::Support& s, std::uint64_t seed, double spread = 1.0) {
  mlirl::Rng rng(seed);
  std::vector<double> logits(s.cell_count());
  for (auto& v : logits) v = spread * rng.normal();
  return mlirl::SequencePolicy::from_log_weights(s, logits);
}

inline std::vector<double> random_params(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  mlirl::Rng rng(seed);
  std::vector<double> out(n);
  for (auto& v : out) v = scale * rng.normal();
  return out;
}

inline mlirl::RewardModel random_tabular(const mlirl::Support& s, std::uint64_t seed, double scale = 1.0) {
  return mlirl::RewardModel::tabular(s).with_params(random_params(s.cell_count(), seed, scale));
}

}  // namespace testing_helpers
