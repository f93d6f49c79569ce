#pragma once

// Comparison definitions implemented at desk scale: discoverable memorization
// (natural prefix-completion) and compressible memorization (adversarial
// compression ratio over the shortest eliciting prompt).

#include <optional>

#include "memaudit/search.hpp"

namespace memaudit {

enum class SplitPolicy { Any, Half };

struct DiscoverableResult {
  bool memorized = false;
  // Smallest split index i such that greedy decoding of s_{1:i} yields the
  // rest of s; present only when memorized.
  std::optional<int> witness_split;
};

// Under SplitPolicy::Any scans i = 1..|s|-1 ascending; Half tests only
// i = ceil(|s|/2).
DiscoverableResult discoverable_check(const ModelBackend& model, const TokenSeq& s,
                                      SplitPolicy policy = SplitPolicy::Any);

struct AcrConfig {
  double tau = 1.0;
  int attempts_per_length = 3;
  // 0 means |y| (prompts longer than the target never count as compression).
  int max_prompt_len = 0;
  GcgConfig search;
  SearchAlgo algo = SearchAlgo::Auto;
  std::uint64_t master_seed = 0;
};

struct AcrResult {
  std::size_t target_len = 0;
  std::optional<int> min_prompt_len;
  std::optional<double> ratio;  // |y| / |x*|
  double tau = 1.0;
  bool memorized = false;  // ratio > tau, strictly
};

// Ascending scan L = 1..max_len; at each length runs `attempts_per_length`
// seeded searches and returns the first L with a success.
std::optional<int> min_prompt_length_search(const ModelBackend& model, const TokenSeq& y, const AcrConfig& cfg,
                                            int max_len);

AcrResult acr(const ModelBackend& model, const TokenSeq& y, const AcrConfig& cfg);

}  // namespace memaudit
