#include "memaudit/search.hpp"

#include <algorithm>
#include <cmath>
#include <future>

#include "memaudit/rng.hpp"

namespace memaudit {

const char* to_string(AuditClass c) {
  switch (c) {
    case AuditClass::Memorized: return "memorized";
    case AuditClass::NotMemorizedNoSignal: return "not-memorized-no-signal";
    case AuditClass::NotMemorizedSearchFailed: return "not-memorized-search-failed";
  }
  return "not-memorized-no-signal";
}

void GcgConfig::validate(int vocab_size) const {
  if (prefix_len < 1) throw AuditError("search: prefix_len must be >= 1");
  if (steps < 0) throw AuditError("search: steps must be >= 0");
  if (top_k < 1 || batch < 1) throw AuditError("search: top_k and batch must be >= 1");
  if (top_k > vocab_size) throw AuditError("search: top_k must not exceed the vocabulary size");
}

int run_budget(int required_prefixes) { return std::max(10, 2 * required_prefixes); }

bool elicits(const ModelBackend& model, const TokenSeq& prefix, const TokenSeq& target) {
  if (prefix.empty()) throw AuditError("elicits: empty prefix");
  if (target.empty()) throw AuditError("elicits: empty target");
  return model.greedy_matches(prefix, target);
}

namespace {

TokenSeq initial_prefix(const GcgConfig& cfg, int vocab_size, Rng& rng) {
  TokenSeq prefix(static_cast<std::size_t>(cfg.prefix_len), cfg.init_token);
  if (cfg.init == PrefixInit::SeededRandom) {
    for (Token& t : prefix) t = static_cast<Token>(rng.below(static_cast<std::uint64_t>(vocab_size)));
  } else {
    if (cfg.init_token < 0 || cfg.init_token >= vocab_size) {
      throw InvalidTokenError("search: init_token outside vocabulary");
    }
  }
  return prefix;
}

TokenSeq wrapped(const GcgConfig& cfg, const TokenSeq& prefix) {
  if (cfg.wrap_prefix.empty() && cfg.wrap_suffix.empty()) return prefix;
  TokenSeq full;
  full.reserve(cfg.wrap_prefix.size() + prefix.size() + cfg.wrap_suffix.size());
  full.insert(full.end(), cfg.wrap_prefix.begin(), cfg.wrap_prefix.end());
  full.insert(full.end(), prefix.begin(), prefix.end());
  full.insert(full.end(), cfg.wrap_suffix.begin(), cfg.wrap_suffix.end());
  return full;
}

void check_search_pre(const ModelBackend& model, const TokenSeq& target, const GcgConfig& cfg) {
  cfg.validate(model.capabilities().vocab_size);
  if (target.empty()) throw AuditError("search: empty target");
  const std::size_t full_len =
      cfg.wrap_prefix.size() + static_cast<std::size_t>(cfg.prefix_len) + cfg.wrap_suffix.size() + target.size();
  if (full_len > static_cast<std::size_t>(model.capabilities().max_context)) {
    throw ContextOverflowError("search: prefix plus target exceeds the model context");
  }
}

struct Proposal {
  int position = 0;
  Token token = 0;
};

// Shared hill-climb skeleton: `propose` fills the per-step candidate pool.
template <typename ProposeFn>
std::optional<PrefixCandidate> climb(const ModelBackend& model, const TokenSeq& target, const GcgConfig& cfg,
                                     std::uint64_t seed, ProposeFn&& propose) {
  Rng rng(splitmix64(seed ^ 0x6763672d72756eULL));
  TokenSeq prefix = initial_prefix(cfg, model.capabilities().vocab_size, rng);

  double best_nll = model.target_nll(wrapped(cfg, prefix), target);
  if (model.greedy_matches(wrapped(cfg, prefix), target)) {
    return PrefixCandidate{prefix, best_nll, true, seed, 0};
  }

  std::vector<Proposal> pool;
  for (int step = 1; step <= cfg.steps; ++step) {
    pool.clear();
    propose(prefix, pool, rng);
    if (pool.empty()) break;

    // Batch of uniform picks from the pool; the best strict improvement wins,
    // evaluated in draw order (abandoning candidates once their partial NLL
    // exceeds the incumbent keeps the argmin and its tie-breaks intact).
    int best_idx = -1;
    double step_best = best_nll;
    std::vector<Proposal> drawn(static_cast<std::size_t>(cfg.batch));
    for (int b = 0; b < cfg.batch; ++b) drawn[static_cast<std::size_t>(b)] = pool[rng.below(pool.size())];
    TokenSeq trial = prefix;
    for (int b = 0; b < cfg.batch; ++b) {
      const Proposal& pr = drawn[static_cast<std::size_t>(b)];
      const Token saved = trial[static_cast<std::size_t>(pr.position)];
      trial[static_cast<std::size_t>(pr.position)] = pr.token;
      const double nll = model.target_nll(wrapped(cfg, trial), target, step_best);
      if (nll < step_best) {
        step_best = nll;
        best_idx = b;
      }
      trial[static_cast<std::size_t>(pr.position)] = saved;
    }
    if (best_idx >= 0) {
      const Proposal& pr = drawn[static_cast<std::size_t>(best_idx)];
      prefix[static_cast<std::size_t>(pr.position)] = pr.token;
      best_nll = step_best;
      if (model.greedy_matches(wrapped(cfg, prefix), target)) {
        return PrefixCandidate{prefix, best_nll, true, seed, step};
      }
    }
  }
  return std::nullopt;
}

}  // namespace

std::optional<PrefixCandidate> gcg_search(const ModelBackend& model, const TokenSeq& target, const GcgConfig& cfg,
                                          std::uint64_t seed) {
  check_search_pre(model, target, cfg);
  if (!model.capabilities().has_input_gradients) {
    throw UnsupportedCapabilityError("gcg_search: backend lacks input gradients (use the random-substitution fallback)");
  }

  const std::size_t wrap_off = cfg.wrap_prefix.size();
  return climb(model, target, cfg, seed, [&](const TokenSeq& prefix, std::vector<Proposal>& pool, Rng&) {
    const auto grad = model.input_token_gradient(wrapped(cfg, prefix), target);
    std::vector<int> order(grad.empty() ? 0 : grad[0].size());
    pool.reserve(prefix.size() * static_cast<std::size_t>(cfg.top_k));
    for (std::size_t pos = 0; pos < prefix.size(); ++pos) {
      const std::vector<double>& row = grad[wrap_off + pos];
      for (std::size_t v = 0; v < order.size(); ++v) order[v] = static_cast<int>(v);
      // Most-negative gradient first; ties by token id for determinism.
      std::partial_sort(order.begin(), order.begin() + cfg.top_k, order.end(), [&row](int a, int b) {
        const double ga = row[static_cast<std::size_t>(a)];
        const double gb = row[static_cast<std::size_t>(b)];
        return ga < gb || (ga == gb && a < b);
      });
      for (int k = 0; k < cfg.top_k; ++k) {
        pool.push_back({static_cast<int>(pos), static_cast<Token>(order[static_cast<std::size_t>(k)])});
      }
    }
  });
}

std::optional<PrefixCandidate> random_substitution_search(const ModelBackend& model, const TokenSeq& target,
                                                          const GcgConfig& cfg, std::uint64_t seed) {
  check_search_pre(model, target, cfg);
  const int vocab = model.capabilities().vocab_size;
  return climb(model, target, cfg, seed, [&](const TokenSeq& prefix, std::vector<Proposal>& pool, Rng& rng) {
    pool.reserve(static_cast<std::size_t>(cfg.batch));
    for (int b = 0; b < cfg.batch; ++b) {
      pool.push_back({static_cast<int>(rng.below(prefix.size())),
                      static_cast<Token>(rng.below(static_cast<std::uint64_t>(vocab)))});
    }
  });
}

TryAddResult try_add_distinct(DistinctPrefixSet& set, const PrefixCandidate& cand, const ModelBackend& model) {
  if (!cand.elicits) throw AuditError("try_add_distinct: candidate does not elicit the target");
  std::vector<double> emb = model.embed_tokens(cand.tokens);
  double min_dist = std::numeric_limits<double>::infinity();
  for (const std::vector<double>& other : set.embeddings) {
    double dot = 0.0;
    for (std::size_t i = 0; i < emb.size(); ++i) dot += emb[i] * other[i];
    min_dist = std::min(min_dist, 1.0 - dot);
  }
  if (min_dist < set.threshold) return {false, min_dist};
  set.members.push_back(cand);
  set.embeddings.push_back(std::move(emb));
  return {true, min_dist};
}

namespace {

std::optional<PrefixCandidate> run_search(const ModelBackend& model, const TokenSeq& target, const AuditConfig& cfg,
                                          std::uint64_t seed) {
  switch (cfg.algo) {
    case SearchAlgo::Gcg: return gcg_search(model, target, cfg.gcg, seed);
    case SearchAlgo::RandomSubstitution: return random_substitution_search(model, target, cfg.gcg, seed);
    case SearchAlgo::Auto:
      return model.capabilities().has_input_gradients ? gcg_search(model, target, cfg.gcg, seed)
                                                      : random_substitution_search(model, target, cfg.gcg, seed);
  }
  return std::nullopt;
}

}  // namespace

AuditVerdict run_multi_prefix_audit(const ModelBackend& model, const std::string& target_id, const TokenSeq& s,
                                    const AuditConfig& cfg) {
  if (s.size() < 2) throw TargetTooShortError("audit: need |s| >= 2, got " + std::to_string(s.size()));

  AuditVerdict verdict;
  verdict.target_id = target_id;
  verdict.probe_mode = cfg.probe;
  verdict.profile = memorization_score(model, s, cfg.eta_min);
  verdict.required_prefixes = verdict.profile.threshold_p;
  verdict.prefixes.threshold = cfg.distinct_threshold;

  const int required = verdict.required_prefixes;
  if (required == 0 && !cfg.probe) {
    verdict.classification = AuditClass::NotMemorizedNoSignal;
    verdict.budget = 0;
    verdict.runs_used = 0;
    return verdict;
  }
  verdict.budget = run_budget(required);

  const auto execute = [&](int run_index) {
    const std::uint64_t seed = derive_run_seed(cfg.master_seed, target_id, static_cast<std::uint64_t>(run_index));
    RunOutcome outcome;
    outcome.run_index = run_index;
    outcome.seed = seed;
    const std::optional<PrefixCandidate> found = run_search(model, s, cfg, seed);
    if (found) {
      outcome.elicited = true;
      outcome.step_found = found->step_found;
      outcome.loss = found->loss;
      outcome.prefix = found->tokens;
    }
    return std::pair<RunOutcome, std::optional<PrefixCandidate>>{std::move(outcome), found};
  };

  // Adjudicate strictly in run order so chunked parallel execution reproduces
  // the sequential protocol; surplus speculative runs are discarded.
  int consecutive_failures = 0;
  bool done = false;
  int next = 0;
  const int width = std::max(1, cfg.threads);
  while (!done && next < verdict.budget) {
    const int chunk = std::min(width, verdict.budget - next);
    std::vector<std::pair<RunOutcome, std::optional<PrefixCandidate>>> results;
    results.reserve(static_cast<std::size_t>(chunk));
    if (chunk == 1) {
      results.push_back(execute(next));
    } else {
      std::vector<std::future<std::pair<RunOutcome, std::optional<PrefixCandidate>>>> futs;
      futs.reserve(static_cast<std::size_t>(chunk));
      for (int j = 0; j < chunk; ++j) {
        futs.push_back(std::async(std::launch::async, execute, next + j));
      }
      for (auto& f : futs) results.push_back(f.get());
    }
    for (auto& [outcome, found] : results) {
      if (done) break;
      if (found) {
        consecutive_failures = 0;
        // The set caps at `required`; successful-but-rejected runs still
        // consume budget and are logged for the raw elicitation rate.
        if (required > 0 && static_cast<int>(verdict.prefixes.size()) < required) {
          const TryAddResult added = try_add_distinct(verdict.prefixes, *found, model);
          outcome.accepted = added.accepted;
          outcome.min_distance = std::isfinite(added.min_distance) ? added.min_distance : -1.0;
        }
      } else {
        ++consecutive_failures;
      }
      verdict.runs.push_back(outcome);
      verdict.runs_used = outcome.run_index + 1;
      if (!cfg.probe && required > 0 && static_cast<int>(verdict.prefixes.size()) >= required) {
        done = true;
      }
      if (cfg.fail_streak > 0 && consecutive_failures >= cfg.fail_streak) {
        done = true;
      }
    }
    next += chunk;
  }

  if (required > 0 && static_cast<int>(verdict.prefixes.size()) >= required) {
    verdict.classification = AuditClass::Memorized;
  } else if (required == 0) {
    verdict.classification = AuditClass::NotMemorizedNoSignal;
  } else {
    verdict.classification = AuditClass::NotMemorizedSearchFailed;
  }
  return verdict;
}

}  // namespace memaudit
