#pragma once

// Analytic conditional-probability table backend. Every next-token
// distribution is an explicit row keyed by the last `order` context tokens;
// unseen contexts fall back to a default row. Serves as the exact oracle for
// the scoring and search machinery in tests.
//
// Embeddings are the identity: token t embeds as the t-th standard basis
// vector, so embed_dim == vocab_size and mean-pooled prefix embeddings are
// normalized token histograms.

#include <map>
#include <vector>

#include "memaudit/backend.hpp"

namespace memaudit {

class TableModel final : public ModelBackend {
public:
  // Default row is uniform unless overridden.
  TableModel(int vocab_size, int order, int max_context = 4096);

  void set_default_row(std::vector<double> probs);

  // Registers P(next | context). Context is stored as given; lookups truncate
  // the query to the last `order` tokens, so keys longer than `order` are
  // rejected. Rows must be non-negative and sum to 1 within 1e-12.
  void set_row(const TokenSeq& context, std::vector<double> probs);

  // Convenience: deterministic row with all mass on `next`.
  void set_deterministic(const TokenSeq& context, Token next);

  const ModelCapabilities& capabilities() const override { return caps_; }
  std::vector<double> next_token_logprobs(const TokenSeq& context) const override;

  int order() const { return order_; }

  // Raw row access for independent oracles in tests: probability vector that
  // next_token_logprobs would exponentiate for this context.
  const std::vector<double>& row_for(const TokenSeq& context) const;

protected:
  void accumulate_embedding_row(Token t, std::vector<double>& acc) const override;

private:
  static void validate_row(const std::vector<double>& probs, int vocab_size);

  ModelCapabilities caps_;
  int order_;
  std::map<TokenSeq, std::vector<double>> rows_;
  std::vector<double> default_row_;
};

}  // namespace memaudit
