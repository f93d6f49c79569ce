#pragma once

// Statistical validation and analytics: per-group attack success rates, the
// one-sided Mann-Whitney U test with rank-biserial effect size, budget
// efficiency accounting, and prefix-embedding distribution histograms.

#include <string>
#include <vector>

#include "memaudit/search.hpp"

namespace memaudit {

struct GroupStats {
  std::string label;
  std::vector<double> rates;  // per-sequence eliciting runs / executed runs
  double mean = 0.0;
  double median = 0.0;
};

GroupStats make_group_stats(std::string label, std::vector<double> rates);

enum class MwuMethod { Exact, NormalApprox };

struct MwuResult {
  double u = 0.0;           // pairs where a > b, ties at half credit
  double p_value = 1.0;     // one-sided, alternative "a greater"
  MwuMethod method = MwuMethod::Exact;
  double rank_biserial = 0.0;
  std::size_t n1 = 0;
  std::size_t n2 = 0;
};

// Exact p (classical rank-permutation null, evaluated at the tie-adjusted
// observed U) when n1*n2 <= exact_cutoff; otherwise a normal approximation
// with tie-corrected variance and continuity correction.
MwuResult mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b, std::size_t exact_cutoff = 400);

double rank_biserial(double u, std::size_t n1, std::size_t n2);

struct EfficiencyStats {
  double avg_budget = 0.0;
  double avg_runs = 0.0;
  double ratio = 0.0;  // avg_runs / avg_budget
};

EfficiencyStats efficiency(const std::vector<double>& budgets, const std::vector<double>& runs_used);
EfficiencyStats efficiency(const std::vector<AuditVerdict>& verdicts);

struct Histogram {
  double lo = 0.0;
  double width = 0.065;
  std::vector<long> counts;
  std::size_t total = 0;

  void add(double x);
  double bin_lo(std::size_t i) const { return lo + static_cast<double>(i) * width; }
};

Histogram make_histogram(double lo, double hi, double width);

// Pooled pairwise cosine distances between each verdict's eliciting prefixes;
// verdicts contributing fewer than two prefixes add nothing.
Histogram prefix_diversity(const std::vector<AuditVerdict>& verdicts, const ModelBackend& model, double width = 0.065);

// Cosine similarity between each eliciting prefix and its own target.
Histogram prefix_target_similarity(const std::vector<AuditVerdict>& verdicts, const ModelBackend& model,
                                   double width = 0.065);

}  // namespace memaudit
