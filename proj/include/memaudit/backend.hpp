#pragma once

// Uniform interface over the audited model: next-token log-probabilities,
// greedy continuation, optional input-token gradients, and mean-pooled token
// embeddings. Backends are immutable once built; every method here is safe to
// call from multiple threads.

#include <limits>
#include <vector>

#include "memaudit/types.hpp"

namespace memaudit {

struct ModelCapabilities {
  bool has_input_gradients = false;
  int vocab_size = 0;
  int max_context = 0;
  int embed_dim = 0;
};

class ModelBackend {
public:
  virtual ~ModelBackend() = default;

  virtual const ModelCapabilities& capabilities() const = 0;

  // Log-probabilities over the vocabulary for the token following `context`.
  // exp of the result sums to 1 within 1e-6; exact zeros are reported as
  // kZeroProbLogSentinel.
  virtual std::vector<double> next_token_logprobs(const TokenSeq& context) const = 0;

  // Greedy decode of `n` tokens after `prefix`. Argmax ties break toward the
  // lowest token id.
  virtual TokenSeq greedy_continue(const TokenSeq& prefix, int n) const;

  // True iff the greedy continuation of length |target| equals `target`.
  // Semantically greedy_continue(prefix, |target|) == target, but bails out at
  // the first mismatching position.
  virtual bool greedy_matches(const TokenSeq& prefix, const TokenSeq& target) const;

  // Gradient of the target negative log-likelihood with respect to one-hot
  // prefix tokens; row i holds d(NLL)/d(one-hot of prefix position i).
  // Backends without gradient support throw UnsupportedCapabilityError.
  virtual std::vector<std::vector<double>> input_token_gradient(const TokenSeq& prefix,
                                                                const TokenSeq& target) const;

  // Sum of -log p(target_t | prefix ++ target_<t). Stops and returns +inf as
  // soon as the partial sum exceeds `abandon_above`. The default walks
  // next_token_logprobs; backends may override with a fused pass.
  virtual double target_nll(const TokenSeq& prefix, const TokenSeq& target,
                            double abandon_above = std::numeric_limits<double>::infinity()) const;

  // L2-normalized mean of the model's input-embedding rows for `tokens`.
  // Order-free by construction (mean pooling).
  std::vector<double> embed_tokens(const TokenSeq& tokens) const;

protected:
  // Adds the embedding row of `t` into `acc` (length embed_dim).
  virtual void accumulate_embedding_row(Token t, std::vector<double>& acc) const = 0;

  void check_tokens(const TokenSeq& tokens) const;
  void check_context_len(std::size_t total_len) const;
};

}  // namespace memaudit
