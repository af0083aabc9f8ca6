#pragma once

// Sequence substrate: token sequences, enumerable completion spaces,
// exact sequence-level policies and bounded reward models.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mlirl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Token = std::int32_t;

class TokenSeq {
 public:
  TokenSeq() = default;
  TokenSeq(std::initializer_list<Token> tokens) : tokens_(tokens) {}
  explicit TokenSeq(std::vector<Token> tokens) : tokens_(std::move(tokens)) {}

  std::span<const Token> tokens() const { return tokens_; }
  std::size_t size() const { return tokens_.size(); }
  bool empty() const { return tokens_.empty(); }
  Token operator[](std::size_t i) const { return tokens_[i]; }

  std::string to_string() const;

  auto operator<=>(const TokenSeq&) const = default;
  bool operator==(const TokenSeq&) const = default;

 private:
  std::vector<Token> tokens_;
};

inline constexpr std::size_t kDefaultEnumerationCap = 1'000'000;

/// All V^H completions of a fixed horizon, indexed in lexicographic order:
/// index(y) = sum_t y_t * V^(H-1-t).
class CompletionSpace {
 public:
  CompletionSpace(int vocab, int horizon, std::size_t cap = kDefaultEnumerationCap);

  int vocab() const { return vocab_; }
  int horizon() const { return horizon_; }
  std::size_t size() const { return size_; }

  std::size_t index_of(const TokenSeq& y) const;
  TokenSeq at(std::size_t index) const;
  void check_token_range(const TokenSeq& seq) const;

  bool operator==(const CompletionSpace&) const = default;

 private:
  int vocab_;
  int horizon_;
  std::size_t size_;
};

std::vector<TokenSeq> enumerate_completions(int vocab, int horizon,
                                            std::size_t cap = kDefaultEnumerationCap);

/// Prompt distribution mu over a finite list of prompts.
class PromptSet {
 public:
  explicit PromptSet(std::vector<TokenSeq> prompts);
  PromptSet(std::vector<TokenSeq> prompts, std::vector<double> weights);

  std::size_t size() const { return prompts_.size(); }
  const TokenSeq& prompt(std::size_t i) const { return prompts_.at(i); }
  const std::vector<TokenSeq>& prompts() const { return prompts_; }
  double weight(std::size_t i) const { return weights_.at(i); }
  std::span<const double> weights() const { return weights_; }

  std::size_t index_of(const TokenSeq& x) const;
  std::optional<std::size_t> find(const TokenSeq& x) const;

  bool operator==(const PromptSet& other) const {
    return prompts_ == other.prompts_ && weights_ == other.weights_;
  }

 private:
  std::vector<TokenSeq> prompts_;
  std::vector<double> weights_;
  std::map<TokenSeq, std::size_t> lookup_;
};

/// The (prompt set, completion space) grid every policy and reward table is
/// laid out over. Cell (p, c) lives at p * completion_count() + c.
class Support {
 public:
  Support(std::shared_ptr<const PromptSet> prompts, CompletionSpace space);

  const PromptSet& prompts() const { return *prompts_; }
  std::shared_ptr<const PromptSet> prompts_ptr() const { return prompts_; }
  const CompletionSpace& completions() const { return space_; }

  std::size_t prompt_count() const { return prompts_->size(); }
  std::size_t completion_count() const { return space_.size(); }
  std::size_t cell_count() const { return prompt_count() * completion_count(); }
  std::size_t cell(std::size_t prompt, std::size_t completion) const {
    return prompt * completion_count() + completion;
  }

  std::size_t prompt_index(const TokenSeq& x) const { return prompts_->index_of(x); }
  std::size_t completion_index(const TokenSeq& y) const { return space_.index_of(y); }

  bool operator==(const Support& other) const;

 private:
  std::shared_ptr<const PromptSet> prompts_;
  CompletionSpace space_;
};

/// Exact sequence-level distribution pi(y | x) for every prompt in the
/// support. Probabilities are canonical; log-probabilities are cached.
class SequencePolicy {
 public:
  /// Validates that each prompt row sums to 1 within `tolerance`.
  static SequencePolicy from_probabilities(Support support, std::vector<double> probs,
                                           double tolerance = 1e-10);
  /// Normalizes each prompt row with a max-subtracted log-sum-exp.
  static SequencePolicy from_log_weights(Support support, std::span<const double> log_weights);
  /// Builds the sequence table from per-position conditional logits laid out
  /// [prompt][position t][prefix index in V^t][token].
  static SequencePolicy from_autoregressive_logits(Support support,
                                                   std::span<const double> logits);
  static SequencePolicy uniform(Support support);
  static SequencePolicy point_mass(Support support, std::span<const std::size_t> completion_per_prompt);

  const Support& support() const { return support_; }
  int vocab() const { return support_.completions().vocab(); }
  int horizon() const { return support_.completions().horizon(); }

  double prob(std::size_t prompt, std::size_t completion) const {
    return probs_[support_.cell(prompt, completion)];
  }
  double logprob(std::size_t prompt, std::size_t completion) const {
    return logprobs_[support_.cell(prompt, completion)];
  }
  double logprob(const TokenSeq& x, const TokenSeq& y) const;

  std::span<const double> probabilities(std::size_t prompt) const;
  std::span<const double> log_probabilities(std::size_t prompt) const;
  std::span<const double> table() const { return probs_; }
  /// Running sum of probabilities(prompt), used for inverse-CDF sampling.
  std::span<const double> cumulative(std::size_t prompt) const;

  /// log pi(next | x, prefix), derived by marginalizing the sequence table.
  double conditional_logprob(std::size_t prompt, std::span<const Token> prefix, Token next) const;
  /// Sum of per-position conditional log-probabilities.
  double autoregressive_logprob(const TokenSeq& x, const TokenSeq& y) const;
  /// Per-position conditional log-probabilities in the from_autoregressive_logits layout.
  std::vector<double> autoregressive_logits() const;

  std::vector<std::size_t> sample_indices(std::size_t prompt, std::size_t n,
                                          std::uint64_t seed) const;
  std::vector<TokenSeq> sample(const TokenSeq& x, std::size_t n, std::uint64_t seed) const;

  /// Raises every probability to at least `floor` and renormalizes. Returns an
  /// identical copy when nothing is below the floor.
  SequencePolicy with_floor(double floor) const;

  double min_probability() const;
  /// max over prompts of |sum_y pi(y|x) - 1|.
  double normalization_residual() const;

 private:
  SequencePolicy(Support support, std::vector<double> probs);

  Support support_;
  std::vector<double> probs_;
  std::vector<double> logprobs_;
  std::vector<double> cumulative_;
};

double logprob(const SequencePolicy& policy, const TokenSeq& x, const TokenSeq& y);
std::vector<TokenSeq> sample(const SequencePolicy& policy, const TokenSeq& x, std::size_t n,
                             std::uint64_t seed);

/// Values r(x, y) over a support. Unbounded; used for evaluated reward models,
/// implicit rewards and hand-built reward functions.
class RewardTable {
 public:
  RewardTable(Support support, std::vector<double> values);

  const Support& support() const { return support_; }
  double operator()(std::size_t prompt, std::size_t completion) const {
    return values_[support_.cell(prompt, completion)];
  }
  double score(const TokenSeq& x, const TokenSeq& y) const;
  std::span<const double> row(std::size_t prompt) const;
  std::span<const double> values() const { return values_; }

 private:
  Support support_;
  std::vector<double> values_;
};

enum class RewardKind { tabular, linear };

/// bounded: r = C_r * sigmoid(raw). identity: r = raw (test-only escape hatch
/// that intentionally leaves the (0, C_r) range).
enum class OutputMap { bounded, identity };

/// Fixed random features phi(x, y) of dimension `dim` for every cell.
class FeatureTable {
 public:
  FeatureTable(Support support, std::size_t dim, std::vector<double> values);
  static FeatureTable random_normal(Support support, std::size_t dim, std::uint64_t seed);

  const Support& support() const { return support_; }
  std::size_t dim() const { return dim_; }
  std::span<const double> at(std::size_t prompt, std::size_t completion) const;
  std::span<const double> values() const { return values_; }

 private:
  Support support_;
  std::size_t dim_;
  std::vector<double> values_;
};

class RewardModel {
 public:
  static RewardModel tabular(Support support, double bound = 5.0,
                             OutputMap map = OutputMap::bounded);
  static RewardModel linear(std::shared_ptr<const FeatureTable> features, double bound = 5.0,
                            OutputMap map = OutputMap::bounded);

  RewardKind kind() const { return kind_; }
  OutputMap output_map() const { return map_; }
  double bound() const { return bound_; }
  const Support& support() const { return support_; }
  std::shared_ptr<const FeatureTable> features() const { return features_; }

  std::span<const double> params() const { return params_; }
  std::size_t param_count() const { return params_.size(); }
  RewardModel with_params(std::vector<double> params) const;
  RewardModel negated() const;

  double raw(std::size_t prompt, std::size_t completion) const;
  double score(std::size_t prompt, std::size_t completion) const;
  double score(const TokenSeq& x, const TokenSeq& y) const;
  /// d r / d raw at the cell.
  double output_slope(std::size_t prompt, std::size_t completion) const;
  /// out += weight * grad_theta r(x, y).
  void accumulate_gradient(std::size_t prompt, std::size_t completion, double weight,
                           std::span<double> out) const;
  std::vector<double> gradient(std::size_t prompt, std::size_t completion) const;

  RewardTable table() const;

 private:
  RewardModel(RewardKind kind, OutputMap map, double bound, Support support,
              std::shared_ptr<const FeatureTable> features, std::vector<double> params);
  double apply_map(double raw) const;

  RewardKind kind_;
  OutputMap map_;
  double bound_;
  Support support_;
  std::shared_ptr<const FeatureTable> features_;
  std::vector<double> params_;
};

double reward_score(const RewardModel& model, const TokenSeq& x, const TokenSeq& y);

/// A synthetic alignment world: pi_expert is the exact KL-regularized
/// optimum of (r_star, pi_ref, beta), and log pi_ref >= log_ref_floor.
struct Instance {
  Support support;
  RewardModel r_star;
  SequencePolicy pi_ref;
  SequencePolicy pi_expert;
  double beta;
  double reward_bound;   // C_r
  double log_ref_floor;  // C_p
  std::uint64_t seed;

  const PromptSet& prompts() const { return support.prompts(); }
  int vocab() const { return support.completions().vocab(); }
  int horizon() const { return support.completions().horizon(); }
};

double sigmoid(double z);
/// log(sigmoid(z)) without overflow.
double log_sigmoid(double z);
/// Max-subtracted log(sum(exp(v))).
double log_sum_exp(std::span<const double> values);

}  // namespace mlirl
