#include "memaudit/scoring.hpp"

#include <cmath>

namespace memaudit {

namespace {

void check_split(const TokenSeq& s, int i) {
  if (s.size() < 2) throw TargetTooShortError("scoring: need |s| >= 2, got " + std::to_string(s.size()));
  if (i < 1 || i >= static_cast<int>(s.size())) {
    throw AuditError("scoring: split index " + std::to_string(i) + " outside [1, " + std::to_string(s.size() - 1) +
                     "]");
  }
}

}  // namespace

double avg_continuation_prob(const ModelBackend& model, const TokenSeq& s, int i) {
  check_split(s, i);
  const auto n = static_cast<int>(s.size());
  double log_sum = 0.0;
  TokenSeq ctx(s.begin(), s.begin() + i);
  for (int t = i; t < n; ++t) {
    const std::vector<double> lp = model.next_token_logprobs(ctx);
    const double p = std::exp(lp[static_cast<std::size_t>(s[static_cast<std::size_t>(t)])]);
    log_sum += std::log(std::min(p + kScoreEpsilon, 1.0));
    ctx.push_back(s[static_cast<std::size_t>(t)]);
  }
  return std::exp(log_sum / static_cast<double>(n - i));
}

double positional_similarity(const ModelBackend& model, const TokenSeq& s, int i) {
  check_split(s, i);
  const auto n = static_cast<int>(s.size());
  const TokenSeq prefix(s.begin(), s.begin() + i);
  const TokenSeq generated = model.greedy_continue(prefix, n - i);
  int matches = 0;
  for (int t = 0; t < n - i; ++t) {
    if (generated[static_cast<std::size_t>(t)] == s[static_cast<std::size_t>(i + t)]) ++matches;
  }
  return static_cast<double>(matches) / static_cast<double>(n - i);
}

MemorizationProfile memorization_score(const ModelBackend& model, const TokenSeq& s, double eta_min) {
  if (s.size() < 2) throw TargetTooShortError("memorization_score: need |s| >= 2, got " + std::to_string(s.size()));
  const auto n = static_cast<int>(s.size());

  MemorizationProfile profile;
  profile.target = s;
  profile.eta_min = eta_min;
  profile.p_avg.reserve(static_cast<std::size_t>(n - 1));
  profile.r.reserve(static_cast<std::size_t>(n - 1));
  profile.sim.reserve(static_cast<std::size_t>(n - 1));

  double acc = 0.0;
  for (int i = 1; i < n; ++i) {
    const double p = avg_continuation_prob(model, s, i);
    const double sim = positional_similarity(model, s, i);
    const double r = (static_cast<double>(n - i) / static_cast<double>(i)) * p;
    profile.p_avg.push_back(p);
    profile.sim.push_back(sim);
    profile.r.push_back(r);
    acc += r * sim;
  }
  profile.eta = acc / static_cast<double>(n - 1);
  profile.threshold_p = prefix_threshold(profile.eta, s.size(), eta_min);
  return profile;
}

int prefix_threshold(double eta, std::size_t length, double eta_min) {
  if (length < 2) throw TargetTooShortError("prefix_threshold: need length >= 2");
  if (eta < 0.0) throw AuditError("prefix_threshold: eta must be >= 0");
  if (eta <= eta_min) return 0;
  const double x = eta * static_cast<double>(length);
  // Snap values within 1e-12 (relative) of an integer before taking the
  // ceiling, so float dust like 4.0000000000001 does not become 5.
  const double nearest = std::nearbyint(x);
  if (std::abs(x - nearest) <= 1e-12 * std::max(1.0, std::abs(x))) {
    return static_cast<int>(nearest);
  }
  return static_cast<int>(std::ceil(x));
}

}  // namespace memaudit
