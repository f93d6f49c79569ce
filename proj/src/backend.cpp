#include "memaudit/backend.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace memaudit {

std::string escape_tokens(const TokenSeq& tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (Token t : tokens) {
    if (t >= 0x20 && t < 0x7f) {
      if (t == '\\') {
        out += "\\\\";
      } else {
        out.push_back(static_cast<char>(t));
      }
    } else if (t >= 0 && t <= 0xff) {
      char buf[8];
      std::snprintf(buf, sizeof(buf), "\\x%02x", static_cast<unsigned>(t));
      out += buf;
    } else {
      out += "<" + std::to_string(t) + ">";
    }
  }
  return out;
}

void ModelBackend::check_tokens(const TokenSeq& tokens) const {
  const int v = capabilities().vocab_size;
  for (Token t : tokens) {
    if (t < 0 || t >= v) {
      throw InvalidTokenError("token id " + std::to_string(t) + " outside vocabulary of size " + std::to_string(v));
    }
  }
}

void ModelBackend::check_context_len(std::size_t total_len) const {
  const auto max_ctx = static_cast<std::size_t>(capabilities().max_context);
  if (total_len > max_ctx) {
    throw ContextOverflowError("context of length " + std::to_string(total_len) + " exceeds max_context " +
                               std::to_string(max_ctx));
  }
}

TokenSeq ModelBackend::greedy_continue(const TokenSeq& prefix, int n) const {
  if (n < 0) throw AuditError("greedy_continue: negative count");
  if (prefix.empty()) throw AuditError("greedy_continue: empty prefix");
  check_tokens(prefix);
  check_context_len(prefix.size() + static_cast<std::size_t>(n));
  TokenSeq ctx = prefix;
  TokenSeq out;
  out.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const std::vector<double> lp = next_token_logprobs(ctx);
    Token best = 0;
    for (Token t = 1; t < static_cast<Token>(lp.size()); ++t) {
      if (lp[static_cast<std::size_t>(t)] > lp[static_cast<std::size_t>(best)]) best = t;
    }
    out.push_back(best);
    ctx.push_back(best);
  }
  return out;
}

bool ModelBackend::greedy_matches(const TokenSeq& prefix, const TokenSeq& target) const {
  if (prefix.empty()) throw AuditError("greedy_matches: empty prefix");
  if (target.empty()) throw AuditError("greedy_matches: empty target");
  check_tokens(prefix);
  check_tokens(target);
  check_context_len(prefix.size() + target.size());
  TokenSeq ctx = prefix;
  for (Token expected : target) {
    const std::vector<double> lp = next_token_logprobs(ctx);
    Token best = 0;
    for (Token t = 1; t < static_cast<Token>(lp.size()); ++t) {
      if (lp[static_cast<std::size_t>(t)] > lp[static_cast<std::size_t>(best)]) best = t;
    }
    if (best != expected) return false;
    ctx.push_back(best);
  }
  return true;
}

std::vector<std::vector<double>> ModelBackend::input_token_gradient(const TokenSeq&, const TokenSeq&) const {
  throw UnsupportedCapabilityError("backend does not expose input-token gradients");
}

double ModelBackend::target_nll(const TokenSeq& prefix, const TokenSeq& target, double abandon_above) const {
  if (prefix.empty()) throw AuditError("target_nll: empty prefix");
  if (target.empty()) throw AuditError("target_nll: empty target");
  check_tokens(prefix);
  check_tokens(target);
  check_context_len(prefix.size() + target.size());
  TokenSeq ctx = prefix;
  double nll = 0.0;
  for (Token t : target) {
    const std::vector<double> lp = next_token_logprobs(ctx);
    nll -= lp[static_cast<std::size_t>(t)];
    if (nll > abandon_above) return std::numeric_limits<double>::infinity();
    ctx.push_back(t);
  }
  return nll;
}

std::vector<double> ModelBackend::embed_tokens(const TokenSeq& tokens) const {
  if (tokens.empty()) throw AuditError("embed_tokens: empty input");
  check_tokens(tokens);
  std::vector<double> acc(static_cast<std::size_t>(capabilities().embed_dim), 0.0);
  for (Token t : tokens) accumulate_embedding_row(t, acc);
  const double inv_n = 1.0 / static_cast<double>(tokens.size());
  double norm_sq = 0.0;
  for (double& x : acc) {
    x *= inv_n;
    norm_sq += x * x;
  }
  const double norm = std::sqrt(norm_sq);
  if (norm > 0.0) {
    for (double& x : acc) x /= norm;
  }
  return acc;
}

}  // namespace memaudit
