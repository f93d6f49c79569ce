#include "memaudit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace memaudit {

namespace {

double median_of(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  if (n == 0) return 0.0;
  return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

// Number of size-n1 rank subsets of n1+n2 distinct ranks with U == u, via the
// standard recurrence N(u; n1, n2) = N(u - n2; n1 - 1, n2) + N(u; n1, n2 - 1).
// Counts stay below 2^53 for n1*n2 <= 400, so doubles hold them exactly.
std::vector<double> exact_u_counts(std::size_t n1, std::size_t n2) {
  const std::size_t umax = n1 * n2;
  // dp[m1][u] for the current m2; at m2 == 0 only u == 0 is reachable.
  std::vector<std::vector<double>> dp(n1 + 1, std::vector<double>(umax + 1, 0.0));
  for (std::size_t m1 = 0; m1 <= n1; ++m1) dp[m1][0] = 1.0;
  for (std::size_t m2 = 1; m2 <= n2; ++m2) {
    std::vector<std::vector<double>> next(n1 + 1, std::vector<double>(umax + 1, 0.0));
    next[0][0] = 1.0;
    for (std::size_t m1 = 1; m1 <= n1; ++m1) {
      for (std::size_t u = 0; u <= umax; ++u) {
        double c = dp[m1][u];                    // largest rank falls in group B
        if (u >= m2) c += next[m1 - 1][u - m2];  // largest rank falls in group A
        next[m1][u] = c;
      }
    }
    dp = std::move(next);
  }
  return dp[n1];
}

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace

GroupStats make_group_stats(std::string label, std::vector<double> rates) {
  GroupStats g;
  g.label = std::move(label);
  g.rates = std::move(rates);
  if (!g.rates.empty()) {
    double sum = 0.0;
    for (double r : g.rates) sum += r;
    g.mean = sum / static_cast<double>(g.rates.size());
    g.median = median_of(g.rates);
  }
  return g;
}

double rank_biserial(double u, std::size_t n1, std::size_t n2) {
  if (n1 < 1 || n2 < 1) throw AuditError("rank_biserial: group sizes must be >= 1");
  const double nn = static_cast<double>(n1) * static_cast<double>(n2);
  if (u < 0.0 || u > nn) throw AuditError("rank_biserial: U outside [0, n1*n2]");
  return 2.0 * u / nn - 1.0;
}

MwuResult mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b, std::size_t exact_cutoff) {
  if (a.empty() || b.empty()) throw AuditError("mann_whitney_u: both groups must be non-empty");
  const std::size_t n1 = a.size();
  const std::size_t n2 = b.size();

  double u = 0.0;
  for (double x : a) {
    for (double y : b) {
      if (x > y) {
        u += 1.0;
      } else if (x == y) {
        u += 0.5;
      }
    }
  }

  MwuResult result;
  result.u = u;
  result.n1 = n1;
  result.n2 = n2;
  result.rank_biserial = rank_biserial(u, n1, n2);

  const double nn = static_cast<double>(n1) * static_cast<double>(n2);
  if (n1 * n2 <= exact_cutoff) {
    result.method = MwuMethod::Exact;
    const std::vector<double> counts = exact_u_counts(n1, n2);
    const auto u_min = static_cast<std::size_t>(std::max(0.0, std::ceil(u - 1e-9)));
    double tail = 0.0;
    double total = 0.0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
      total += counts[k];
      if (k >= u_min) tail += counts[k];
    }
    result.p_value = tail / total;
  } else {
    result.method = MwuMethod::NormalApprox;
    const std::size_t n = n1 + n2;
    std::map<double, std::size_t> tie_groups;
    for (double x : a) ++tie_groups[x];
    for (double y : b) ++tie_groups[y];
    double tie_term = 0.0;
    for (const auto& [value, t] : tie_groups) {
      const auto td = static_cast<double>(t);
      tie_term += td * td * td - td;
    }
    const auto nd = static_cast<double>(n);
    const double mu = nn / 2.0;
    const double var = nn / 12.0 * ((nd + 1.0) - tie_term / (nd * (nd - 1.0)));
    if (var <= 0.0) {
      result.p_value = u > mu ? 0.5 : 1.0;  // fully tied groups carry no evidence
    } else {
      const double z = (u - mu - 0.5) / std::sqrt(var);
      result.p_value = normal_sf(z);
    }
  }
  if (result.p_value <= 0.0) result.p_value = std::numeric_limits<double>::min();
  if (result.p_value > 1.0) result.p_value = 1.0;
  return result;
}

EfficiencyStats efficiency(const std::vector<double>& budgets, const std::vector<double>& runs_used) {
  if (budgets.empty() || budgets.size() != runs_used.size()) {
    throw AuditError("efficiency: need equally sized, non-empty budget and run lists");
  }
  EfficiencyStats e;
  for (double b : budgets) e.avg_budget += b;
  for (double r : runs_used) e.avg_runs += r;
  e.avg_budget /= static_cast<double>(budgets.size());
  e.avg_runs /= static_cast<double>(runs_used.size());
  if (e.avg_budget <= 0.0) throw AuditError("efficiency: ratio undefined for zero-budget lists");
  e.ratio = e.avg_runs / e.avg_budget;
  return e;
}

EfficiencyStats efficiency(const std::vector<AuditVerdict>& verdicts) {
  std::vector<double> budgets, runs;
  budgets.reserve(verdicts.size());
  runs.reserve(verdicts.size());
  for (const AuditVerdict& v : verdicts) {
    budgets.push_back(static_cast<double>(v.budget));
    runs.push_back(static_cast<double>(v.runs_used));
  }
  return efficiency(budgets, runs);
}

void Histogram::add(double x) {
  if (counts.empty()) return;
  auto bin = static_cast<long>(std::floor((x - lo) / width));
  bin = std::clamp(bin, 0L, static_cast<long>(counts.size()) - 1L);
  ++counts[static_cast<std::size_t>(bin)];
  ++total;
}

Histogram make_histogram(double lo, double hi, double width) {
  if (width <= 0.0 || hi <= lo) throw AuditError("make_histogram: invalid bounds");
  Histogram h;
  h.lo = lo;
  h.width = width;
  h.counts.assign(static_cast<std::size_t>(std::ceil((hi - lo) / width)), 0);
  return h;
}

namespace {

std::vector<std::vector<double>> eliciting_prefix_embeddings(const AuditVerdict& v, const ModelBackend& model) {
  std::vector<std::vector<double>> embs;
  for (const RunOutcome& run : v.runs) {
    if (run.elicited && !run.prefix.empty()) embs.push_back(model.embed_tokens(run.prefix));
  }
  return embs;
}

}  // namespace

Histogram prefix_diversity(const std::vector<AuditVerdict>& verdicts, const ModelBackend& model, double width) {
  Histogram h = make_histogram(0.0, 2.0 + width, width);
  for (const AuditVerdict& v : verdicts) {
    const auto embs = eliciting_prefix_embeddings(v, model);
    for (std::size_t i = 0; i < embs.size(); ++i) {
      for (std::size_t j = i + 1; j < embs.size(); ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < embs[i].size(); ++k) dot += embs[i][k] * embs[j][k];
        h.add(1.0 - dot);
      }
    }
  }
  return h;
}

Histogram prefix_target_similarity(const std::vector<AuditVerdict>& verdicts, const ModelBackend& model,
                                   double width) {
  Histogram h = make_histogram(-1.0, 1.0 + width, width);
  for (const AuditVerdict& v : verdicts) {
    const std::vector<double> target_emb = model.embed_tokens(v.profile.target);
    for (const RunOutcome& run : v.runs) {
      if (!run.elicited || run.prefix.empty()) continue;
      const std::vector<double> emb = model.embed_tokens(run.prefix);
      double dot = 0.0;
      for (std::size_t k = 0; k < emb.size(); ++k) dot += emb[k] * target_emb[k];
      h.add(dot);
    }
  }
  return h;
}

}  // namespace memaudit
