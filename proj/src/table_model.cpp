#include "memaudit/table_model.hpp"

#include <cmath>

namespace memaudit {

TableModel::TableModel(int vocab_size, int order, int max_context) : order_(order) {
  if (vocab_size < 2) throw AuditError("TableModel: vocab_size must be >= 2");
  if (order < 1) throw AuditError("TableModel: order must be >= 1");
  caps_.has_input_gradients = false;
  caps_.vocab_size = vocab_size;
  caps_.max_context = max_context;
  caps_.embed_dim = vocab_size;
  default_row_.assign(static_cast<std::size_t>(vocab_size), 1.0 / vocab_size);
}

void TableModel::validate_row(const std::vector<double>& probs, int vocab_size) {
  if (static_cast<int>(probs.size()) != vocab_size) {
    throw AuditError("TableModel: row size does not match vocabulary");
  }
  double sum = 0.0;
  for (double p : probs) {
    if (p < 0.0) throw AuditError("TableModel: negative probability in row");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12) {
    throw AuditError("TableModel: row sums to " + std::to_string(sum) + ", expected 1 within 1e-12");
  }
}

void TableModel::set_default_row(std::vector<double> probs) {
  validate_row(probs, caps_.vocab_size);
  default_row_ = std::move(probs);
}

void TableModel::set_row(const TokenSeq& context, std::vector<double> probs) {
  if (static_cast<int>(context.size()) > order_) {
    throw AuditError("TableModel: context key longer than table order");
  }
  check_tokens(context);
  validate_row(probs, caps_.vocab_size);
  rows_[context] = std::move(probs);
}

void TableModel::set_deterministic(const TokenSeq& context, Token next) {
  std::vector<double> row(static_cast<std::size_t>(caps_.vocab_size), 0.0);
  row.at(static_cast<std::size_t>(next)) = 1.0;
  set_row(context, std::move(row));
}

const std::vector<double>& TableModel::row_for(const TokenSeq& context) const {
  TokenSeq key;
  if (static_cast<int>(context.size()) > order_) {
    key.assign(context.end() - order_, context.end());
  } else {
    key = context;
  }
  const auto it = rows_.find(key);
  return it == rows_.end() ? default_row_ : it->second;
}

std::vector<double> TableModel::next_token_logprobs(const TokenSeq& context) const {
  check_tokens(context);
  check_context_len(context.size());
  const std::vector<double>& row = row_for(context);
  std::vector<double> lp(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) {
    lp[i] = row[i] > 0.0 ? std::log(row[i]) : kZeroProbLogSentinel;
  }
  return lp;
}

void TableModel::accumulate_embedding_row(Token t, std::vector<double>& acc) const {
  acc[static_cast<std::size_t>(t)] += 1.0;
}

}  // namespace memaudit
