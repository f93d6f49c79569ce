#pragma once

// Dataset ingestion and construction: JSONL loading with byte-level
// tokenization, random-token control generation, overlapping half splits for
// partial-sequence audits, and word-count stratified sampling.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "memaudit/types.hpp"

namespace memaudit {

enum class RecordRole { Target, Background, Control };

const char* to_string(RecordRole role);
RecordRole record_role_from_string(const std::string& s);

struct Record {
  std::string id;
  std::optional<std::string> text;  // raw bytes; tokenized on load
  TokenSeq tokens;
  RecordRole role = RecordRole::Target;
  int weight = 1;  // repetition multiplier for training
};

struct Corpus {
  std::vector<Record> records;
  int vocab_size = 256;  // byte-level unless overridden

  bool empty() const { return records.empty(); }
  std::size_t size() const { return records.size(); }
};

TokenSeq tokenize_bytes(const std::string& text);
std::string detokenize_bytes(const TokenSeq& tokens);

// One JSON object per line: {"id": ..., "text": ... | "tokens": [...],
// "role": "target|background|control", "weight": n}. Exactly one of
// text/tokens per record; ids must be unique; malformed lines and duplicate
// ids raise DataFormatError naming the offending line.
Corpus load_jsonl(const std::string& path, int vocab_size = 256);
void save_jsonl(const Corpus& corpus, const std::string& path);

// Uniformly random token sequences ("control" role), lengths uniform over the
// inclusive range. Ids are control-0000, control-0001, ...
std::vector<Record> gen_random_controls(int vocab_size, int count, int len_min, int len_max, std::uint64_t seed);

// Three overlapping subsequences, each of length ceil(|s|/2): the leading
// half, a centered half, and the trailing half. Requires |s| >= 4.
struct HalfSplits {
  TokenSeq first;
  TokenSeq middle;
  TokenSeq final;
};
HalfSplits split_halves(const TokenSeq& s);

// Up to `per_stratum` records per whitespace word count in
// [word_count_min, word_count_max], uniformly without replacement. Records
// without raw text are skipped. Undersized strata contribute everything they
// have plus a warning.
struct StratifiedSample {
  Corpus sample;
  std::vector<std::string> warnings;
};
StratifiedSample stratified_sample(const Corpus& corpus, int word_count_min, int word_count_max, int per_stratum,
                                   std::uint64_t seed);

int whitespace_word_count(const std::string& text);

// True if `needle` occurs as a contiguous subsequence of any record's tokens.
// Used to screen generated controls against the training corpus.
bool appears_in_corpus(const Corpus& corpus, const TokenSeq& needle);

// Stable content hash over records (ids, roles, weights, tokens).
std::string corpus_hash(const Corpus& corpus);

}  // namespace memaudit
