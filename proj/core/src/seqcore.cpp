#include "mlirl/seqcore.hpp"

#include "mlirl/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace mlirl {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double log_sigmoid(double z) {
  if (z >= 0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

// ---------------------------------------------------------------------------

std::string TokenSeq::to_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (i) os << ',';
    os << tokens_[i];
  }
  os << ']';
  return os.str();
}

CompletionSpace::CompletionSpace(int vocab, int horizon, std::size_t cap)
    : vocab_(vocab), horizon_(horizon), size_(1) {
  if (vocab < 1 || horizon < 1) throw Error("vocabulary and horizon must be positive");
  for (int t = 0; t < horizon; ++t) {
    if (size_ > cap / static_cast<std::size_t>(vocab)) throw Error("enumeration too large");
    size_ *= static_cast<std::size_t>(vocab);
  }
  if (size_ > cap) throw Error("enumeration too large");
}

void CompletionSpace::check_token_range(const TokenSeq& seq) const {
  for (Token t : seq.tokens()) {
    if (t < 0 || t >= vocab_) throw Error("token out of range");
  }
}

std::size_t CompletionSpace::index_of(const TokenSeq& y) const {
  if (static_cast<int>(y.size()) != horizon_) throw Error("horizon mismatch");
  check_token_range(y);
  std::size_t index = 0;
  for (Token t : y.tokens()) index = index * static_cast<std::size_t>(vocab_) + static_cast<std::size_t>(t);
  return index;
}

TokenSeq CompletionSpace::at(std::size_t index) const {
  std::vector<Token> tokens(static_cast<std::size_t>(horizon_));
  for (int t = horizon_ - 1; t >= 0; --t) {
    tokens[static_cast<std::size_t>(t)] = static_cast<Token>(index % static_cast<std::size_t>(vocab_));
    index /= static_cast<std::size_t>(vocab_);
  }
  return TokenSeq(std::move(tokens));
}

std::vector<TokenSeq> enumerate_completions(int vocab, int horizon, std::size_t cap) {
  const CompletionSpace space(vocab, horizon, cap);
  std::vector<TokenSeq> out;
  out.reserve(space.size());
  for (std::size_t i = 0; i < space.size(); ++i) out.push_back(space.at(i));
  return out;
}

// ---------------------------------------------------------------------------

PromptSet::PromptSet(std::vector<TokenSeq> prompts)
    : PromptSet(prompts, std::vector<double>(prompts.size(),
                                             prompts.empty() ? 0.0 : 1.0 / static_cast<double>(prompts.size()))) {}

PromptSet::PromptSet(std::vector<TokenSeq> prompts, std::vector<double> weights)
    : prompts_(std::move(prompts)), weights_(std::move(weights)) {
  if (prompts_.empty()) throw Error("prompt set is empty");
  if (weights_.size() != prompts_.size()) throw Error("prompt weights size mismatch");
  double total = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0)) throw Error("prompt weights must be non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw Error("prompt weights must sum to 1");
  for (std::size_t i = 0; i < prompts_.size(); ++i) {
    if (!lookup_.emplace(prompts_[i], i).second) throw Error("duplicate prompt " + prompts_[i].to_string());
  }
}

std::optional<std::size_t> PromptSet::find(const TokenSeq& x) const {
  auto it = lookup_.find(x);
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

std::size_t PromptSet::index_of(const TokenSeq& x) const {
  if (auto i = find(x)) return *i;
  throw Error("prompt not in support");
}

Support::Support(std::shared_ptr<const PromptSet> prompts, CompletionSpace space)
    : prompts_(std::move(prompts)), space_(space) {
  if (!prompts_) throw Error("support requires a prompt set");
}

bool Support::operator==(const Support& other) const {
  if (!(space_ == other.space_)) return false;
  return prompts_ == other.prompts_ || *prompts_ == *other.prompts_;
}

// ---------------------------------------------------------------------------

SequencePolicy::SequencePolicy(Support support, std::vector<double> probs)
    : support_(std::move(support)), probs_(std::move(probs)) {
  logprobs_.resize(probs_.size());
  cumulative_.resize(probs_.size());
  const std::size_t n = support_.completion_count();
  for (std::size_t p = 0; p < support_.prompt_count(); ++p) {
    double acc = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const std::size_t k = p * n + c;
      logprobs_[k] = probs_[k] > 0.0 ? std::log(probs_[k]) : -std::numeric_limits<double>::infinity();
      acc += probs_[k];
      cumulative_[k] = acc;
    }
  }
}

SequencePolicy SequencePolicy::from_probabilities(Support support, std::vector<double> probs,
                                                  double tolerance) {
  if (probs.size() != support.cell_count()) throw Error("probability table size mismatch");
  const std::size_t n = support.completion_count();
  for (std::size_t p = 0; p < support.prompt_count(); ++p) {
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double v = probs[p * n + c];
      if (!(v >= 0.0) || !std::isfinite(v)) throw Error("probabilities must be finite and non-negative");
      total += v;
    }
    if (std::abs(total - 1.0) > tolerance) throw Error("probabilities do not sum to 1");
  }
  return SequencePolicy(std::move(support), std::move(probs));
}

SequencePolicy SequencePolicy::from_log_weights(Support support, std::span<const double> log_weights) {
  if (log_weights.size() != support.cell_count()) throw Error("log-weight table size mismatch");
  const std::size_t n = support.completion_count();
  std::vector<double> probs(log_weights.size());
  for (std::size_t p = 0; p < support.prompt_count(); ++p) {
    const auto row = log_weights.subspan(p * n, n);
    const double lse = log_sum_exp(row);
    if (!std::isfinite(lse)) throw Error("non-finite log-partition");
    for (std::size_t c = 0; c < n; ++c) probs[p * n + c] = std::exp(row[c] - lse);
  }
  return SequencePolicy(std::move(support), std::move(probs));
}

namespace {

std::size_t ipow(std::size_t base, int exp) {
  std::size_t r = 1;
  for (int i = 0; i < exp; ++i) r *= base;
  return r;
}

// Number of autoregressive logits per prompt: sum_t V^t * V.
std::size_t logits_per_prompt(std::size_t vocab, int horizon) {
  std::size_t total = 0;
  for (int t = 0; t < horizon; ++t) total += ipow(vocab, t) * vocab;
  return total;
}

}  // namespace

SequencePolicy SequencePolicy::from_autoregressive_logits(Support support,
                                                          std::span<const double> logits) {
  const auto vocab = static_cast<std::size_t>(support.completions().vocab());
  const int horizon = support.completions().horizon();
  const std::size_t per_prompt = logits_per_prompt(vocab, horizon);
  if (logits.size() != per_prompt * support.prompt_count()) throw Error("autoregressive logit table size mismatch");

  // Per-position log-softmax, then sum along each completion's path.
  std::vector<double> logcond(logits.size());
  for (std::size_t start = 0; start < logits.size(); start += vocab) {
    const auto block = logits.subspan(start, vocab);
    const double lse = log_sum_exp(block);
    for (std::size_t v = 0; v < vocab; ++v) logcond[start + v] = block[v] - lse;
  }
  const std::size_t n = support.completion_count();
  std::vector<double> log_weights(support.cell_count());
  for (std::size_t p = 0; p < support.prompt_count(); ++p) {
    for (std::size_t c = 0; c < n; ++c) {
      const TokenSeq y = support.completions().at(c);
      double lp = 0.0;
      std::size_t offset = p * per_prompt;
      std::size_t prefix = 0;
      for (int t = 0; t < horizon; ++t) {
        const auto tok = static_cast<std::size_t>(y[static_cast<std::size_t>(t)]);
        lp += logcond[offset + prefix * vocab + tok];
        offset += ipow(vocab, t) * vocab;
        prefix = prefix * vocab + tok;
      }
      log_weights[p * n + c] = lp;
    }
  }
  return from_log_weights(std::move(support), log_weights);
}

SequencePolicy SequencePolicy::uniform(Support support) {
  const double v = 1.0 / static_cast<double>(support.completion_count());
  std::vector<double> probs(support.cell_count(), v);
  return SequencePolicy(std::move(support), std::move(probs));
}

SequencePolicy SequencePolicy::point_mass(Support support,
                                          std::span<const std::size_t> completion_per_prompt) {
  if (completion_per_prompt.size() != support.prompt_count()) throw Error("point mass needs one completion per prompt");
  std::vector<double> probs(support.cell_count(), 0.0);
  for (std::size_t p = 0; p < support.prompt_count(); ++p) {
    if (completion_per_prompt[p] >= support.completion_count()) throw Error("completion index out of range");
    probs[support.cell(p, completion_per_prompt[p])] = 1.0;
  }
  return SequencePolicy(std::move(support), std::move(probs));
}

double SequencePolicy::logprob(const TokenSeq& x, const TokenSeq& y) const {
  const std::size_t p = support_.prompt_index(x);
  const std::size_t c = support_.completion_index(y);
  return logprob(p, c);
}

std::span<const double> SequencePolicy::probabilities(std::size_t prompt) const {
  const std::size_t n = support_.completion_count();
  return std::span<const double>(probs_).subspan(prompt * n, n);
}

std::span<const double> SequencePolicy::cumulative(std::size_t prompt) const {
  const std::size_t n = support_.completion_count();
  return std::span<const double>(cumulative_).subspan(prompt * n, n);
}

std::span<const double> SequencePolicy::log_probabilities(std::size_t prompt) const {
  const std::size_t n = support_.completion_count();
  return std::span<const double>(logprobs_).subspan(prompt * n, n);
}

double SequencePolicy::conditional_logprob(std::size_t prompt, std::span<const Token> prefix,
                                           Token next) const {
  const auto vocab = static_cast<std::size_t>(this->vocab());
  const int h = horizon();
  if (static_cast<int>(prefix.size()) >= h) throw Error("prefix must be shorter than the horizon");
  if (next < 0 || static_cast<std::size_t>(next) >= vocab) throw Error("token out of range");
  std::size_t prefix_index = 0;
  for (Token t : prefix) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) throw Error("token out of range");
    prefix_index = prefix_index * vocab + static_cast<std::size_t>(t);
  }
  const int depth = static_cast<int>(prefix.size());
  const std::size_t block = ipow(vocab, h - depth);
  const std::size_t child = block / vocab;
  const auto row = probabilities(prompt);
  double parent_mass = 0.0;
  double child_mass = 0.0;
  const std::size_t begin = prefix_index * block;
  const std::size_t child_begin = begin + static_cast<std::size_t>(next) * child;
  for (std::size_t c = begin; c < begin + block; ++c) parent_mass += row[c];
  for (std::size_t c = child_begin; c < child_begin + child; ++c) child_mass += row[c];
  if (parent_mass <= 0.0) return -std::log(static_cast<double>(vocab));
  return std::log(child_mass) - std::log(parent_mass);
}

double SequencePolicy::autoregressive_logprob(const TokenSeq& x, const TokenSeq& y) const {
  const std::size_t p = support_.prompt_index(x);
  support_.completions().index_of(y);
  double total = 0.0;
  const auto tokens = y.tokens();
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    total += conditional_logprob(p, tokens.first(t), tokens[t]);
  }
  return total;
}

std::vector<double> SequencePolicy::autoregressive_logits() const {
  const auto vocab = static_cast<std::size_t>(this->vocab());
  const int h = horizon();
  std::vector<double> out;
  out.reserve(logits_per_prompt(vocab, h) * support_.prompt_count());
  for (std::size_t p = 0; p < support_.prompt_count(); ++p) {
    for (int t = 0; t < h; ++t) {
      const std::size_t prefixes = ipow(vocab, t);
      for (std::size_t prefix = 0; prefix < prefixes; ++prefix) {
        std::vector<Token> tokens(static_cast<std::size_t>(t));
        std::size_t rem = prefix;
        for (int i = t - 1; i >= 0; --i) {
          tokens[static_cast<std::size_t>(i)] = static_cast<Token>(rem % vocab);
          rem /= vocab;
        }
        for (std::size_t v = 0; v < vocab; ++v) {
          out.push_back(conditional_logprob(p, tokens, static_cast<Token>(v)));
        }
      }
    }
  }
  return out;
}

std::vector<std::size_t> SequencePolicy::sample_indices(std::size_t prompt, std::size_t n,
                                                        std::uint64_t seed) const {
  if (n == 0) throw Error("empty sample request");
  if (prompt >= support_.prompt_count()) throw Error("prompt not in support");
  const auto cdf = cumulative(prompt);
  Rng rng(seed);
  std::vector<std::size_t> out(n);
  for (auto& v : out) v = rng.categorical(cdf);
  return out;
}

std::vector<TokenSeq> SequencePolicy::sample(const TokenSeq& x, std::size_t n,
                                             std::uint64_t seed) const {
  if (n == 0) throw Error("empty sample request");
  const std::size_t p = support_.prompt_index(x);
  std::vector<TokenSeq> out;
  out.reserve(n);
  for (std::size_t c : sample_indices(p, n, seed)) out.push_back(support_.completions().at(c));
  return out;
}

SequencePolicy SequencePolicy::with_floor(double floor) const {
  if (!(floor > 0.0) || floor * static_cast<double>(support_.completion_count()) >= 1.0) {
    throw Error("floor must lie in (0, 1/|Y|)");
  }
  if (min_probability() >= floor) return *this;
  const std::size_t n = support_.completion_count();
  std::vector<double> probs(probs_.size());
  for (std::size_t p = 0; p < support_.prompt_count(); ++p) {
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      probs[p * n + c] = std::max(probs_[p * n + c], floor);
      total += probs[p * n + c];
    }
    for (std::size_t c = 0; c < n; ++c) probs[p * n + c] /= total;
  }
  return SequencePolicy(support_, std::move(probs));
}

double SequencePolicy::min_probability() const {
  return *std::min_element(probs_.begin(), probs_.end());
}

double SequencePolicy::normalization_residual() const {
  double worst = 0.0;
  for (std::size_t p = 0; p < support_.prompt_count(); ++p) {
    const auto row = probabilities(p);
    const double total = std::accumulate(row.begin(), row.end(), 0.0);
    worst = std::max(worst, std::abs(total - 1.0));
  }
  return worst;
}

double logprob(const SequencePolicy& policy, const TokenSeq& x, const TokenSeq& y) {
  return policy.logprob(x, y);
}

std::vector<TokenSeq> sample(const SequencePolicy& policy, const TokenSeq& x, std::size_t n,
                             std::uint64_t seed) {
  return policy.sample(x, n, seed);
}

// ---------------------------------------------------------------------------

RewardTable::RewardTable(Support support, std::vector<double> values)
    : support_(std::move(support)), values_(std::move(values)) {
  if (values_.size() != support_.cell_count()) throw Error("reward table size mismatch");
}

double RewardTable::score(const TokenSeq& x, const TokenSeq& y) const {
  auto p = support_.prompts().find(x);
  if (!p) throw Error("pair not in table");
  return (*this)(*p, support_.completion_index(y));
}

std::span<const double> RewardTable::row(std::size_t prompt) const {
  const std::size_t n = support_.completion_count();
  return std::span<const double>(values_).subspan(prompt * n, n);
}

FeatureTable::FeatureTable(Support support, std::size_t dim, std::vector<double> values)
    : support_(std::move(support)), dim_(dim), values_(std::move(values)) {
  if (dim_ == 0) throw Error("feature dimension must be positive");
  if (values_.size() != support_.cell_count() * dim_) throw Error("feature table size mismatch");
}

FeatureTable FeatureTable::random_normal(Support support, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> values(support.cell_count() * dim);
  for (auto& v : values) v = rng.normal();
  return FeatureTable(std::move(support), dim, std::move(values));
}

std::span<const double> FeatureTable::at(std::size_t prompt, std::size_t completion) const {
  return std::span<const double>(values_).subspan(support_.cell(prompt, completion) * dim_, dim_);
}

RewardModel::RewardModel(RewardKind kind, OutputMap map, double bound, Support support,
                         std::shared_ptr<const FeatureTable> features, std::vector<double> params)
    : kind_(kind),
      map_(map),
      bound_(bound),
      support_(std::move(support)),
      features_(std::move(features)),
      params_(std::move(params)) {
  if (!(bound_ > 0.0) || !std::isfinite(bound_)) throw Error("reward bound must be positive");
}

RewardModel RewardModel::tabular(Support support, double bound, OutputMap map) {
  std::vector<double> params(support.cell_count(), 0.0);
  return RewardModel(RewardKind::tabular, map, bound, std::move(support), nullptr, std::move(params));
}

RewardModel RewardModel::linear(std::shared_ptr<const FeatureTable> features, double bound,
                                OutputMap map) {
  if (!features) throw Error("linear reward requires features");
  std::vector<double> params(features->dim(), 0.0);
  Support support = features->support();
  return RewardModel(RewardKind::linear, map, bound, std::move(support), std::move(features),
                     std::move(params));
}

RewardModel RewardModel::with_params(std::vector<double> params) const {
  if (params.size() != params_.size()) throw Error("parameter vector size mismatch");
  return RewardModel(kind_, map_, bound_, support_, features_, std::move(params));
}

RewardModel RewardModel::negated() const {
  std::vector<double> params(params_.size());
  std::transform(params_.begin(), params_.end(), params.begin(), [](double v) { return -v; });
  return with_params(std::move(params));
}

double RewardModel::raw(std::size_t prompt, std::size_t completion) const {
  if (kind_ == RewardKind::tabular) return params_[support_.cell(prompt, completion)];
  const auto phi = features_->at(prompt, completion);
  double s = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) s += phi[i] * params_[i];
  return s;
}

double RewardModel::apply_map(double raw) const {
  return map_ == OutputMap::bounded ? bound_ * sigmoid(raw) : raw;
}

double RewardModel::score(std::size_t prompt, std::size_t completion) const {
  return apply_map(raw(prompt, completion));
}

double RewardModel::score(const TokenSeq& x, const TokenSeq& y) const {
  auto p = support_.prompts().find(x);
  if (!p) throw Error("pair not in table");
  return score(*p, support_.completion_index(y));
}

double RewardModel::output_slope(std::size_t prompt, std::size_t completion) const {
  if (map_ == OutputMap::identity) return 1.0;
  const double s = sigmoid(raw(prompt, completion));
  return bound_ * s * (1.0 - s);
}

void RewardModel::accumulate_gradient(std::size_t prompt, std::size_t completion, double weight,
                                      std::span<double> out) const {
  const double g = weight * output_slope(prompt, completion);
  if (kind_ == RewardKind::tabular) {
    out[support_.cell(prompt, completion)] += g;
    return;
  }
  const auto phi = features_->at(prompt, completion);
  for (std::size_t i = 0; i < phi.size(); ++i) out[i] += g * phi[i];
}

std::vector<double> RewardModel::gradient(std::size_t prompt, std::size_t completion) const {
  std::vector<double> g(params_.size(), 0.0);
  accumulate_gradient(prompt, completion, 1.0, g);
  return g;
}

RewardTable RewardModel::table() const {
  std::vector<double> values(support_.cell_count());
  const std::size_t n = support_.completion_count();
  for (std::size_t p = 0; p < support_.prompt_count(); ++p) {
    for (std::size_t c = 0; c < n; ++c) values[p * n + c] = score(p, c);
  }
  return RewardTable(support_, std::move(values));
}

double reward_score(const RewardModel& model, const TokenSeq& x, const TokenSeq& y) {
  return model.score(x, y);
}

}  // namespace mlirl
