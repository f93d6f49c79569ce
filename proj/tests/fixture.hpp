#pragma once

// Deterministic desk-scale fixture: a corpus of upweighted target phrases
// (10-30 bytes) plus background text, including records that embed each
// target after short random-byte pads the way quoted strings appear inside
// larger documents. Training on it makes the targets verbatim-recallable at
// the positions adversarial prefixes put them in.

#include <string>
#include <vector>

#include "memaudit/corpus.hpp"
#include "memaudit/micro_transformer.hpp"
#include "memaudit/rng.hpp"

namespace fixture {

using memaudit::Corpus;
using memaudit::Record;
using memaudit::RecordRole;
using memaudit::Token;
using memaudit::TokenSeq;

inline const char* kWords[] = {
    "amber", "brook", "cinder", "dune",   "ember",  "frost",  "glade", "harbor", "iris",  "jasper",
    "kestrel", "lumen", "meadow", "nectar", "onyx",  "pearl",  "quartz", "raven", "slate", "thorn",
    "umber", "vale",  "willow", "zephyr", "cove",   "drift",  "fern",  "grove",  "heath", "isle"};
inline constexpr int kWordCount = 30;

inline std::string phrase_of_length(memaudit::Rng& rng, int len) {
  std::string s;
  while (static_cast<int>(s.size()) < len) {
    if (!s.empty()) s += ' ';
    s += kWords[rng.below(kWordCount)];
  }
  s.resize(static_cast<std::size_t>(len));
  if (s.back() == ' ') s.back() = 'a';
  return s;
}

struct FixtureSpec {
  int n_targets = 30;
  int len_lo = 10;
  int len_hi = 30;
  int target_weight = 12;
  int pad_weight = 6;
  std::vector<int> pads = {4, 8};
  int backgrounds = 20;
  std::uint64_t seed = 2026;
};

inline Corpus make_fixture_corpus(const FixtureSpec& spec) {
  memaudit::Rng rng(spec.seed);
  Corpus corpus;
  for (int i = 0; i < spec.n_targets; ++i) {
    const int len = spec.len_lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.len_hi - spec.len_lo + 1)));
    const std::string text = phrase_of_length(rng, len);
    const TokenSeq tokens = memaudit::tokenize_bytes(text);
    corpus.records.push_back({"target-" + std::to_string(i), text, tokens, RecordRole::Target, spec.target_weight});
    // The same phrase embedded mid-context after random byte pads.
    for (const int pad : spec.pads) {
      TokenSeq padded;
      for (int k = 0; k < pad; ++k) padded.push_back(static_cast<Token>(rng.below(256)));
      padded.insert(padded.end(), tokens.begin(), tokens.end());
      corpus.records.push_back({"embed-" + std::to_string(i) + "-" + std::to_string(pad), std::nullopt,
                                std::move(padded), RecordRole::Background, spec.pad_weight});
    }
  }
  for (int i = 0; i < spec.backgrounds; ++i) {
    const std::string text = phrase_of_length(rng, 20 + static_cast<int>(rng.below(13)));
    corpus.records.push_back({"bg-" + std::to_string(i), text, memaudit::tokenize_bytes(text),
                              RecordRole::Background, 1});
  }
  return corpus;
}

inline memaudit::MicroTransformerConfig fixture_model_config(std::uint64_t seed = 11) {
  memaudit::MicroTransformerConfig cfg;  // library defaults: 2 layers, 2 heads, d=64, context 64, V=256
  cfg.seed = seed;
  cfg.learning_rate = 2e-3;
  cfg.epochs = 60;
  return cfg;
}

}  // namespace fixture
