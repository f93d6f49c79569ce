#include "memaudit/baselines.hpp"

#include "memaudit/rng.hpp"

namespace memaudit {

DiscoverableResult discoverable_check(const ModelBackend& model, const TokenSeq& s, SplitPolicy policy) {
  const auto n = static_cast<int>(s.size());
  if (n < 2) throw TargetTooShortError("discoverable_check: need |s| >= 2, got " + std::to_string(s.size()));

  const auto completes_from = [&](int i) {
    const TokenSeq prefix(s.begin(), s.begin() + i);
    const TokenSeq rest(s.begin() + i, s.end());
    return model.greedy_matches(prefix, rest);
  };

  if (policy == SplitPolicy::Half) {
    const int i = (n + 1) / 2;
    if (i >= 1 && i < n && completes_from(i)) return {true, i};
    return {false, std::nullopt};
  }
  for (int i = 1; i < n; ++i) {
    if (completes_from(i)) return {true, i};
  }
  return {false, std::nullopt};
}

std::optional<int> min_prompt_length_search(const ModelBackend& model, const TokenSeq& y, const AcrConfig& cfg,
                                            int max_len) {
  if (max_len < 1) throw AuditError("min_prompt_length_search: max_len must be >= 1");
  if (y.empty()) throw AuditError("min_prompt_length_search: empty target");
  const bool gradients = model.capabilities().has_input_gradients;
  const bool use_gcg = cfg.algo == SearchAlgo::Gcg || (cfg.algo == SearchAlgo::Auto && gradients);
  if (cfg.algo == SearchAlgo::Gcg && !gradients) {
    throw UnsupportedCapabilityError("min_prompt_length_search: GCG requested without gradient support");
  }

  for (int len = 1; len <= max_len; ++len) {
    GcgConfig search = cfg.search;
    search.prefix_len = len;
    for (int attempt = 0; attempt < cfg.attempts_per_length; ++attempt) {
      const std::uint64_t seed =
          derive_run_seed(cfg.master_seed, "acr-len-" + std::to_string(len), static_cast<std::uint64_t>(attempt));
      const std::optional<PrefixCandidate> found = use_gcg ? gcg_search(model, y, search, seed)
                                                           : random_substitution_search(model, y, search, seed);
      if (found) return len;
    }
  }
  return std::nullopt;
}

AcrResult acr(const ModelBackend& model, const TokenSeq& y, const AcrConfig& cfg) {
  if (y.empty()) throw AuditError("acr: empty target");
  AcrResult result;
  result.target_len = y.size();
  result.tau = cfg.tau;
  const int max_len = cfg.max_prompt_len > 0 ? cfg.max_prompt_len : static_cast<int>(y.size());
  result.min_prompt_len = min_prompt_length_search(model, y, cfg, max_len);
  if (result.min_prompt_len) {
    result.ratio = static_cast<double>(y.size()) / static_cast<double>(*result.min_prompt_len);
    result.memorized = *result.ratio > cfg.tau;
  }
  return result;
}

}  // namespace memaudit
