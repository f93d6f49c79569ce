#pragma once

// Internal memorization score eta and the derived prefix elicitation
// threshold P. For a target s and each split i in [1, |s|-1]:
//
//   p_avg(i) = exp( mean_t log(min(p(s_{t+1}|s_{1:t}) + eps, 1)) )   t in [i, |s|-1]
//   sim_i    = positional match rate of the greedy continuation of s_{1:i}
//   r_i      = ((|s|-i)/i) * p_avg(i)
//   eta      = mean_i r_i * sim_i
//   P        = ceil(eta * |s|)  when eta > eta_min, else 0
//
// eta is not guaranteed to stay within [0, 1].

#include <cstdint>
#include <vector>

#include "memaudit/backend.hpp"

namespace memaudit {

inline constexpr double kScoreEpsilon = 1e-9;

struct MemorizationProfile {
  TokenSeq target;
  std::vector<double> p_avg;  // index i-1 holds split i
  std::vector<double> r;
  std::vector<double> sim;
  double eta = 0.0;
  int threshold_p = 0;
  double epsilon = kScoreEpsilon;
  double eta_min = 0.0;
};

// Geometric-mean probability of the true continuation from split i.
// The smoothing is clamped so p + eps never exceeds 1.
double avg_continuation_prob(const ModelBackend& model, const TokenSeq& s, int i);

// Fraction of greedy-continuation tokens matching s past split i.
double positional_similarity(const ModelBackend& model, const TokenSeq& s, int i);

MemorizationProfile memorization_score(const ModelBackend& model, const TokenSeq& s, double eta_min = 0.0);

// ceil(eta * length) with a 1e-12 snap-to-integer guard; 0 when eta <= eta_min.
int prefix_threshold(double eta, std::size_t length, double eta_min = 0.0);

}  // namespace memaudit
