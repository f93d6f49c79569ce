#include "memaudit/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "memaudit/rng.hpp"

namespace memaudit {

using nlohmann::ordered_json;

const char* to_string(RecordRole role) {
  switch (role) {
    case RecordRole::Target: return "target";
    case RecordRole::Background: return "background";
    case RecordRole::Control: return "control";
  }
  return "target";
}

RecordRole record_role_from_string(const std::string& s) {
  if (s == "target") return RecordRole::Target;
  if (s == "background") return RecordRole::Background;
  if (s == "control") return RecordRole::Control;
  throw DataFormatError("unknown record role: " + s);
}

TokenSeq tokenize_bytes(const std::string& text) {
  TokenSeq tokens;
  tokens.reserve(text.size());
  for (unsigned char c : text) tokens.push_back(static_cast<Token>(c));
  return tokens;
}

std::string detokenize_bytes(const TokenSeq& tokens) {
  std::string text;
  text.reserve(tokens.size());
  for (Token t : tokens) {
    if (t < 0 || t > 0xff) throw InvalidTokenError("detokenize_bytes: token " + std::to_string(t) + " is not a byte");
    text.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return text;
}

Corpus load_jsonl(const std::string& path, int vocab_size) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataFormatError("cannot open " + path);
  Corpus corpus;
  corpus.vocab_size = vocab_size;
  std::map<std::string, int> seen_ids;  // id -> first line
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const std::exception& e) {
      throw DataFormatError(path + ":" + std::to_string(line_no) + ": malformed JSON: " + e.what());
    }
    if (!j.is_object()) throw DataFormatError(path + ":" + std::to_string(line_no) + ": expected a JSON object");

    Record rec;
    if (!j.contains("id") || !j["id"].is_string()) {
      throw DataFormatError(path + ":" + std::to_string(line_no) + ": missing string field \"id\"");
    }
    rec.id = j["id"].get<std::string>();
    const auto [it, inserted] = seen_ids.emplace(rec.id, line_no);
    if (!inserted) {
      throw DataFormatError(path + ":" + std::to_string(line_no) + ": duplicate id \"" + rec.id +
                            "\" (first seen on line " + std::to_string(it->second) + ")");
    }

    const bool has_text = j.contains("text");
    const bool has_tokens = j.contains("tokens");
    if (has_text == has_tokens) {
      throw DataFormatError(path + ":" + std::to_string(line_no) + ": exactly one of \"text\"/\"tokens\" required");
    }
    if (has_text) {
      rec.text = j["text"].get<std::string>();
      rec.tokens = tokenize_bytes(*rec.text);
    } else {
      rec.tokens = j["tokens"].get<TokenSeq>();
    }
    for (Token t : rec.tokens) {
      if (t < 0 || t >= vocab_size) {
        throw DataFormatError(path + ":" + std::to_string(line_no) + ": token id " + std::to_string(t) +
                              " outside vocabulary of size " + std::to_string(vocab_size));
      }
    }
    if (j.contains("role")) rec.role = record_role_from_string(j["role"].get<std::string>());
    if (j.contains("weight")) {
      rec.weight = j["weight"].get<int>();
      if (rec.weight < 1) {
        throw DataFormatError(path + ":" + std::to_string(line_no) + ": weight must be >= 1");
      }
    }
    corpus.records.push_back(std::move(rec));
  }
  return corpus;
}

void save_jsonl(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataFormatError("cannot write " + path);
  for (const Record& rec : corpus.records) {
    ordered_json j;
    j["id"] = rec.id;
    if (rec.text) {
      j["text"] = *rec.text;
    } else {
      j["tokens"] = rec.tokens;
    }
    j["role"] = to_string(rec.role);
    if (rec.weight != 1) j["weight"] = rec.weight;
    out << j.dump() << "\n";
  }
}

std::vector<Record> gen_random_controls(int vocab_size, int count, int len_min, int len_max, std::uint64_t seed) {
  if (vocab_size < 2) throw AuditError("gen_random_controls: vocab_size must be >= 2");
  if (len_min < 2 || len_max < len_min) throw AuditError("gen_random_controls: invalid length range");
  Rng rng(splitmix64(seed ^ 0xc0117701u));
  std::vector<Record> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Record rec;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "control-%04d", i);
    rec.id = buf;
    rec.role = RecordRole::Control;
    const auto len = static_cast<std::size_t>(rng.range(len_min, len_max));
    rec.tokens.reserve(len);
    for (std::size_t k = 0; k < len; ++k) {
      rec.tokens.push_back(static_cast<Token>(rng.below(static_cast<std::uint64_t>(vocab_size))));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

HalfSplits split_halves(const TokenSeq& s) {
  const std::size_t n = s.size();
  if (n < 4) throw TargetTooShortError("split_halves: need |s| >= 4, got " + std::to_string(n));
  const std::size_t h = (n + 1) / 2;
  const std::size_t m = (n - h) / 2;
  HalfSplits parts;
  parts.first.assign(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(h));
  parts.middle.assign(s.begin() + static_cast<std::ptrdiff_t>(m), s.begin() + static_cast<std::ptrdiff_t>(m + h));
  parts.final.assign(s.end() - static_cast<std::ptrdiff_t>(h), s.end());
  return parts;
}

int whitespace_word_count(const std::string& text) {
  std::istringstream iss(text);
  std::string tok;
  int n = 0;
  while (iss >> tok) ++n;
  return n;
}

StratifiedSample stratified_sample(const Corpus& corpus, int word_count_min, int word_count_max, int per_stratum,
                                   std::uint64_t seed) {
  if (corpus.empty()) throw EmptyCorpusError("stratified_sample: empty corpus");
  StratifiedSample result;
  result.sample.vocab_size = corpus.vocab_size;

  std::map<int, std::vector<std::size_t>> strata;
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < corpus.records.size(); ++i) {
    const Record& rec = corpus.records[i];
    if (!rec.text) {
      ++skipped;
      continue;
    }
    const int wc = whitespace_word_count(*rec.text);
    if (wc < word_count_min || wc > word_count_max) continue;
    strata[wc].push_back(i);
  }
  if (skipped > 0) {
    result.warnings.push_back("skipped " + std::to_string(skipped) + " token-only records (no text to count words)");
  }

  for (auto& [wc, members] : strata) {
    if (static_cast<int>(members.size()) <= per_stratum) {
      if (static_cast<int>(members.size()) < per_stratum) {
        result.warnings.push_back("stratum word_count=" + std::to_string(wc) + " has only " +
                                  std::to_string(members.size()) + " of " + std::to_string(per_stratum) + " records");
      }
      for (std::size_t i : members) result.sample.records.push_back(corpus.records[i]);
      continue;
    }
    // Partial Fisher-Yates: the first per_stratum slots are a uniform draw
    // without replacement.
    Rng rng(derive_run_seed(seed, "stratum", static_cast<std::uint64_t>(wc)));
    for (int k = 0; k < per_stratum; ++k) {
      const std::size_t j = static_cast<std::size_t>(k) + rng.below(members.size() - static_cast<std::size_t>(k));
      std::swap(members[static_cast<std::size_t>(k)], members[j]);
    }
    std::vector<std::size_t> chosen(members.begin(), members.begin() + per_stratum);
    std::sort(chosen.begin(), chosen.end());  // keep corpus order within the stratum
    for (std::size_t i : chosen) result.sample.records.push_back(corpus.records[i]);
  }
  return result;
}

bool appears_in_corpus(const Corpus& corpus, const TokenSeq& needle) {
  if (needle.empty()) return true;
  for (const Record& rec : corpus.records) {
    if (rec.tokens.size() < needle.size()) continue;
    const auto it = std::search(rec.tokens.begin(), rec.tokens.end(), needle.begin(), needle.end());
    if (it != rec.tokens.end()) return true;
  }
  return false;
}

std::string corpus_hash(const Corpus& corpus) {
  std::uint64_t h = fnv1a64("memaudit-corpus-v1");
  const auto mix_u64 = [&h](std::uint64_t v) { h = fnv1a64(&v, sizeof(v), h); };
  mix_u64(static_cast<std::uint64_t>(corpus.vocab_size));
  mix_u64(corpus.records.size());
  for (const Record& rec : corpus.records) {
    h = fnv1a64(rec.id.data(), rec.id.size(), h);
    mix_u64(static_cast<std::uint64_t>(rec.role));
    mix_u64(static_cast<std::uint64_t>(rec.weight));
    mix_u64(rec.tokens.size());
    for (Token t : rec.tokens) mix_u64(static_cast<std::uint64_t>(t));
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "fnv1a:%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace memaudit
