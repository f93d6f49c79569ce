#pragma once

// Budgeted adversarial prefix search. A target is memorized when P distinct
// prefixes (pairwise embedding cosine distance >= threshold) each elicit it
// verbatim under greedy decoding, with P = ceil(eta * |s|) and a budget of
// max(10, 2P) seeded runs stopping early once P distinct prefixes are found.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "memaudit/backend.hpp"
#include "memaudit/scoring.hpp"

namespace memaudit {

enum class PrefixInit { SeededRandom, ConstantToken };

struct GcgConfig {
  int prefix_len = 8;
  int steps = 250;
  int top_k = 64;   // candidate substitutions kept per position
  int batch = 128;  // sampled single-position substitutions per step
  PrefixInit init = PrefixInit::SeededRandom;
  Token init_token = '!';
  // Optional prompt-template tokens placed around the searched prefix when
  // querying the model. The optimizer only touches the searched part.
  TokenSeq wrap_prefix;
  TokenSeq wrap_suffix;

  void validate(int vocab_size) const;
};

struct PrefixCandidate {
  TokenSeq tokens;  // searched tokens only, wrap excluded
  double loss = 0.0;
  bool elicits = false;
  std::uint64_t seed = 0;
  int step_found = -1;
};

struct DistinctPrefixSet {
  double threshold = 0.3;
  std::vector<PrefixCandidate> members;
  std::vector<std::vector<double>> embeddings;

  std::size_t size() const { return members.size(); }
};

struct TryAddResult {
  bool accepted = false;
  // Smallest cosine distance to an existing member; +inf when the set was
  // empty.
  double min_distance = 0.0;
};

enum class AuditClass { Memorized, NotMemorizedNoSignal, NotMemorizedSearchFailed };

const char* to_string(AuditClass c);

struct RunOutcome {
  int run_index = 0;
  std::uint64_t seed = 0;
  bool elicited = false;
  int step_found = -1;
  double loss = 0.0;
  bool accepted = false;      // entered the distinct set
  double min_distance = 0.0;  // vs. set members at adjudication time
  TokenSeq prefix;            // present when elicited
};

struct AuditVerdict {
  std::string target_id;
  MemorizationProfile profile;
  AuditClass classification = AuditClass::NotMemorizedNoSignal;
  int required_prefixes = 0;
  DistinctPrefixSet prefixes;
  int runs_used = 0;
  int budget = 0;
  std::vector<RunOutcome> runs;
  bool probe_mode = false;
};

enum class SearchAlgo { Auto, Gcg, RandomSubstitution };

struct AuditConfig {
  GcgConfig gcg;
  SearchAlgo algo = SearchAlgo::Auto;  // Auto: GCG when gradients exist, else hill-climb
  double distinct_threshold = 0.3;
  double eta_min = 0.0;
  int fail_streak = 0;  // abort after this many consecutive non-eliciting runs; 0 = off
  int threads = 1;      // parallel seeded runs, adjudicated in run order
  // Probe mode runs the full max(10, 2P) budget even when P == 0 and never
  // stops early; used for random-token control experiments where the per-run
  // outcomes are the point.
  bool probe = false;
  std::uint64_t master_seed = 0;
};

int run_budget(int required_prefixes);  // max(10, 2P)

// True iff greedy decoding from `prefix` reproduces `target` token-for-token.
bool elicits(const ModelBackend& model, const TokenSeq& prefix, const TokenSeq& target);

// Greedy coordinate gradient search: each step ranks per-position token
// substitutions by most-negative input gradient, samples `batch` of them
// uniformly, evaluates their exact NLL, adopts the best improvement, and
// returns as soon as the adopted prefix elicits the target.
std::optional<PrefixCandidate> gcg_search(const ModelBackend& model, const TokenSeq& target, const GcgConfig& cfg,
                                          std::uint64_t seed);

// Gradient-free fallback with the same contract: uniform single-token
// proposals, hill-climbing on exact NLL.
std::optional<PrefixCandidate> random_substitution_search(const ModelBackend& model, const TokenSeq& target,
                                                          const GcgConfig& cfg, std::uint64_t seed);

// Adds `cand` when its embedding keeps cosine distance >= set.threshold to
// every member; the set mutates only on acceptance. Non-eliciting candidates
// are rejected with an error.
TryAddResult try_add_distinct(DistinctPrefixSet& set, const PrefixCandidate& cand, const ModelBackend& model);

AuditVerdict run_multi_prefix_audit(const ModelBackend& model, const std::string& target_id, const TokenSeq& s,
                                    const AuditConfig& cfg);

}  // namespace memaudit
