#include <doctest.h>

#include <cmath>

#include "memaudit/table_model.hpp"

using namespace memaudit;

namespace {

TableModel chain_model() {
  // Deterministic order-1 chain 1 -> 2 -> 3; everything else uniform.
  TableModel m(4, 1);
  m.set_deterministic({1}, 2);
  m.set_deterministic({2}, 3);
  return m;
}

}  // namespace

TEST_CASE("uniform table rows give ln(1/V) everywhere") {
  TableModel m(4, 2);
  for (const TokenSeq& ctx : {TokenSeq{0}, TokenSeq{1, 2}, TokenSeq{3, 3, 3}}) {
    const auto lp = m.next_token_logprobs(ctx);
    REQUIRE(lp.size() == 4);
    for (double v : lp) CHECK(v == doctest::Approx(std::log(0.25)).epsilon(1e-12));
  }
}

TEST_CASE("deterministic table row: log 1 is zero, zeros become the sentinel") {
  TableModel m(4, 1);
  m.set_deterministic({1}, 2);
  const auto lp = m.next_token_logprobs({1});
  CHECK(lp[2] == 0.0);
  CHECK(lp[0] == kZeroProbLogSentinel);
  CHECK(lp[1] == kZeroProbLogSentinel);
  CHECK(lp[3] == kZeroProbLogSentinel);
}

TEST_CASE("table rows must sum to one") {
  TableModel m(3, 1);
  CHECK_THROWS_AS(m.set_row({0}, {0.5, 0.5, 0.1}), AuditError);
  CHECK_THROWS_AS(m.set_row({0}, {-0.1, 0.6, 0.5}), AuditError);
  CHECK_NOTHROW(m.set_row({0}, {0.25, 0.25, 0.5}));
}

TEST_CASE("table lookups truncate the context to the table order") {
  TableModel m(4, 1);
  m.set_deterministic({2}, 3);
  const auto lp = m.next_token_logprobs({0, 1, 2});  // key is the trailing [2]
  CHECK(lp[3] == 0.0);
}

TEST_CASE("greedy continuation follows a deterministic chain") {
  const TableModel m = chain_model();
  CHECK(m.greedy_continue({1}, 2) == TokenSeq{2, 3});
}

TEST_CASE("greedy ties break toward the lowest token id") {
  TableModel m(4, 1);
  CHECK(m.greedy_continue({3}, 3) == TokenSeq{0, 0, 0});
}

TEST_CASE("greedy n = 0 yields the empty sequence") {
  const TableModel m = chain_model();
  CHECK(m.greedy_continue({1}, 0).empty());
}

TEST_CASE("greedy preconditions") {
  const TableModel m = chain_model();
  CHECK_THROWS_AS(m.greedy_continue({}, 2), AuditError);
  CHECK_THROWS_AS(m.greedy_continue({9}, 1), InvalidTokenError);
}

TEST_CASE("context overflow is reported") {
  TableModel m(4, 1, 8);
  const TokenSeq long_ctx(9, 1);
  CHECK_THROWS_AS(m.next_token_logprobs(long_ctx), ContextOverflowError);
  CHECK_THROWS_AS(m.greedy_continue({1}, 8), ContextOverflowError);
}

TEST_CASE("table model reports no gradient capability") {
  const TableModel m = chain_model();
  CHECK_FALSE(m.capabilities().has_input_gradients);
  CHECK_THROWS_AS(m.input_token_gradient({1}, {2}), UnsupportedCapabilityError);
}

TEST_CASE("table embeddings are identity rows, mean-pooled and normalized") {
  const TableModel m = chain_model();
  const auto e1 = m.embed_tokens({2});
  REQUIRE(e1.size() == 4);
  CHECK(e1[2] == doctest::Approx(1.0));
  CHECK(e1[0] == 0.0);

  // Histogram of {1, 3}: two equal components, unit norm.
  const auto e2 = m.embed_tokens({1, 3});
  CHECK(e2[1] == doctest::Approx(1.0 / std::sqrt(2.0)));
  CHECK(e2[3] == doctest::Approx(1.0 / std::sqrt(2.0)));

  // Mean pooling is order-free.
  CHECK(m.embed_tokens({1, 3, 3}) == m.embed_tokens({3, 1, 3}));
  CHECK_THROWS_AS(m.embed_tokens({}), AuditError);
}

TEST_CASE("default target_nll walks the conditional chain") {
  const TableModel m = chain_model();
  CHECK(m.target_nll({1}, {2, 3}) == doctest::Approx(0.0));
  // Uniform everywhere else: two tokens at 1/4 each.
  CHECK(m.target_nll({3}, {0, 0}) == doctest::Approx(-2.0 * std::log(0.25)));
  // Abandon threshold short-circuits to infinity.
  CHECK(std::isinf(m.target_nll({3}, {0, 0}, 0.5)));
}
