#pragma once

// Reference computations written independently of the library: plain loops,
// no log-sum-exp tricks, no shared helpers. Only used on small, well-scaled
// inputs where the naive formulas are accurate.

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <cstddef>
#include <vector>

#include "mlirl/seqcore.hpp"

namespace oracle {

inline std::vector<std::vector<int>> enumerate(int vocab, int horizon) {
  std::vector<std::vector<int>> out{{}};
  for (int t = 0; t < horizon; ++t) {
    std::vector<std::vector<int>> next;
    for (const auto& prefix : out) {
      for (int v = 0; v < vocab; ++v) {
        auto seq = prefix;
        seq.push_back(v);
        next.push_back(seq);
      }
    }
    out = next;
  }
  return out;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// pi_ref * exp(r / beta) normalized, computed directly.
inline std::vector<double> gibbs(const std::vector<double>& ref, const std::vector<double>& r, double beta) {
  std::vector<double> w(ref.size());
  double z = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) z += w[i] = ref[i] * std::exp(r[i] / beta);
  for (auto& v : w) v /= z;
  return w;
}

inline double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double out = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) out += p[i] * std::log(p[i] / q[i]);
  }
  return out;
}

inline std::vector<double> row(const mlirl::SequencePolicy& policy, std::size_t prompt) {
  const auto probs = policy.probabilities(prompt);
  return {probs.begin(), probs.end()};
}

inline std::vector<double> reward_row(const mlirl::RewardModel& reward, std::size_t prompt) {
  std::vector<double> out(reward.support().completion_count());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = reward.score(prompt, c);
  return out;
}

/// P(r(a) > r(b)) + 0.5 P(r(a) == r(b)) for a ~ pa, b ~ pb at one prompt.
inline double win_probability(const std::vector<double>& pa, const std::vector<double>& pb,
                              const std::vector<double>& r) {
  double out = 0.0;
  for (std::size_t a = 0; a < pa.size(); ++a) {
    for (std::size_t b = 0; b < pb.size(); ++b) {
      const double credit = r[a] > r[b] ? 1.0 : (r[a] == r[b] ? 0.5 : 0.0);
      out += pa[a] * pb[b] * credit;
    }
  }
  return out;
}

/// Pearson chi-square goodness-of-fit p-value; cells with zero expectation
/// must also have zero observations and are skipped.
inline double chi_square_p(const std::vector<double>& observed_counts, const std::vector<double>& probs) {
  double n = 0.0;
  for (double c : observed_counts) n += c;
  double stat = 0.0;
  int dof = -1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double expected = n * probs[i];
    if (expected == 0.0) continue;
    stat += (observed_counts[i] - expected) * (observed_counts[i] - expected) / expected;
    ++dof;
  }
  if (dof < 1) return 1.0;
  boost::math::chi_squared dist(dof);
  return boost::math::cdf(boost::math::complement(dist, stat));
}

}  // namespace oracle
