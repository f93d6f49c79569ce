#include <doctest.h>

#include <cmath>

#include "memaudit/search.hpp"
#include "memaudit/table_model.hpp"
#include "oracles.hpp"

using namespace memaudit;

namespace {

// Order-1 chain 0 -> 1 -> 2 -> 3 over V = 8: any prefix ending in 0 elicits
// [1, 2, 3]; unseen contexts are uniform.
TableModel chain8() {
  TableModel m(8, 1);
  m.set_deterministic({0}, 1);
  m.set_deterministic({1}, 2);
  m.set_deterministic({2}, 3);
  return m;
}

GcgConfig small_search() {
  GcgConfig cfg;
  cfg.prefix_len = 4;
  cfg.steps = 30;
  cfg.batch = 16;
  cfg.top_k = 4;
  return cfg;
}

}  // namespace

TEST_CASE("elicits: chain head true, uniform false, empty prefix errors") {
  const TableModel m = chain8();
  CHECK(elicits(m, {0}, {1, 2, 3}));
  CHECK(elicits(m, {6, 0}, {1, 2, 3}));
  CHECK_FALSE(elicits(m, {5}, {1, 2, 3}));  // uniform ties decode to 0s
  CHECK_THROWS_AS(elicits(m, {}, {1}), AuditError);
}

TEST_CASE("run_budget is max(10, 2P)") {
  CHECK(run_budget(0) == 10);
  CHECK(run_budget(3) == 10);
  CHECK(run_budget(5) == 10);
  CHECK(run_budget(7) == 14);
  CHECK(run_budget(50) == 100);
}

TEST_CASE("gcg_search demands gradient support") {
  const TableModel m = chain8();
  CHECK_THROWS_AS(gcg_search(m, {1, 2, 3}, small_search(), 1), UnsupportedCapabilityError);
}

TEST_CASE("random_substitution_search finds a verified-solvable prefix") {
  const TableModel m = chain8();
  const TokenSeq target{1, 2, 3};
  // Ground truth: eliciting prompts of length 1 exist (exhaustive scan).
  CHECK(oracles::exhaustive_min_prompt_len(m, target, 2) == 1);

  const auto found = random_substitution_search(m, target, small_search(), 7);
  REQUIRE(found.has_value());
  CHECK(found->elicits);
  CHECK(elicits(m, found->tokens, target));
  CHECK(found->loss == doctest::Approx(0.0));
}

TEST_CASE("random_substitution_search returns none when no prefix exists") {
  TableModel m(4, 2);  // fully uniform: greedy decodes only 0s
  const TokenSeq target{2, 3};
  CHECK(oracles::exhaustive_min_prompt_len(m, target, 2) == 0);

  GcgConfig cfg = small_search();
  cfg.prefix_len = 2;
  cfg.steps = 10;
  CHECK_FALSE(random_substitution_search(m, target, cfg, 1).has_value());
}

TEST_CASE("adopted-prefix loss never exceeds the initial prefix loss") {
  // Monotone search: adoptions only happen on strict NLL improvement, so the
  // reported loss is bounded by the (known, constant-init) starting loss.
  TableModel m(8, 1);
  m.set_deterministic({0}, 1);
  m.set_deterministic({1}, 2);
  m.set_deterministic({2}, 3);
  const TokenSeq target{1, 2, 3};
  GcgConfig cfg = small_search();
  cfg.init = PrefixInit::ConstantToken;
  cfg.init_token = 6;
  const double init_nll = m.target_nll(TokenSeq(4, 6), target);
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto found = random_substitution_search(m, target, cfg, seed);
    if (found) CHECK(found->loss <= init_nll);
  }
}

TEST_CASE("random_substitution_search with zero steps yields none") {
  const TableModel m = chain8();
  GcgConfig cfg = small_search();
  cfg.steps = 0;
  cfg.init = PrefixInit::ConstantToken;
  cfg.init_token = 5;  // [5,5,5,5] does not elicit
  CHECK_FALSE(random_substitution_search(m, {1, 2, 3}, cfg, 1).has_value());
}

TEST_CASE("wrap tokens take part in elicitation but not in the searched prefix") {
  const TableModel m = chain8();
  GcgConfig cfg = small_search();
  cfg.wrap_suffix = {0};  // wrapped context always ends in the chain head
  cfg.init = PrefixInit::ConstantToken;
  cfg.init_token = 5;
  const auto found = random_substitution_search(m, {1, 2, 3}, cfg, 3);
  REQUIRE(found.has_value());
  CHECK(found->step_found == 0);
  CHECK(found->tokens == TokenSeq(4, 5));  // untouched searched part
  TokenSeq wrapped = found->tokens;
  wrapped.push_back(0);
  CHECK(elicits(m, wrapped, {1, 2, 3}));
}

TEST_CASE("search validates its configuration") {
  const TableModel m = chain8();
  GcgConfig cfg = small_search();
  cfg.top_k = 9;  // > V
  CHECK_THROWS_AS(random_substitution_search(m, {1, 2, 3}, cfg, 1), AuditError);
  cfg = small_search();
  cfg.prefix_len = 0;
  CHECK_THROWS_AS(random_substitution_search(m, {1, 2, 3}, cfg, 1), AuditError);
}

TEST_CASE("try_add_distinct enforces the pairwise distance threshold") {
  const TableModel m = chain8();
  DistinctPrefixSet set;
  set.threshold = 0.3;

  PrefixCandidate a{{0, 0}, 0.0, true, 1, 0};
  const TryAddResult r1 = try_add_distinct(set, a, m);
  CHECK(r1.accepted);  // empty set accepts vacuously
  CHECK(std::isinf(r1.min_distance));

  // Token-identical candidate: distance exactly 0.
  PrefixCandidate b{{0, 0}, 0.0, true, 2, 1};
  const TryAddResult r2 = try_add_distinct(set, b, m);
  CHECK_FALSE(r2.accepted);
  CHECK(r2.min_distance == doctest::Approx(0.0));
  CHECK(set.size() == 1);

  // Disjoint token histogram: orthogonal embeddings, distance 1.
  PrefixCandidate c{{1, 1}, 0.0, true, 3, 2};
  const TryAddResult r3 = try_add_distinct(set, c, m);
  CHECK(r3.accepted);
  CHECK(r3.min_distance == doctest::Approx(1.0));
  CHECK(set.size() == 2);

  PrefixCandidate bad{{2, 2}, 0.0, false, 4, 0};
  CHECK_THROWS_AS(try_add_distinct(set, bad, m), AuditError);
}

TEST_CASE("audit: zero internal signal short-circuits") {
  const TableModel uniform(8, 2);
  AuditConfig cfg;
  cfg.gcg = small_search();
  const AuditVerdict v = run_multi_prefix_audit(uniform, "ctl", {3, 1, 2}, cfg);
  CHECK(v.classification == AuditClass::NotMemorizedNoSignal);
  CHECK(v.budget == 0);
  CHECK(v.runs_used == 0);
  CHECK(v.runs.empty());
}

TEST_CASE("audit: memorized chain satisfies the budget and distinctness laws") {
  const TableModel m = chain8();
  AuditConfig cfg;
  cfg.gcg = small_search();
  cfg.distinct_threshold = 0.2;
  cfg.master_seed = 5;
  const AuditVerdict v = run_multi_prefix_audit(m, "chain", {1, 2, 3}, cfg);

  CHECK(v.required_prefixes == 4);  // eta = 1.25, |s| = 3
  CHECK(v.budget == 10);
  REQUIRE(v.classification == AuditClass::Memorized);
  CHECK(static_cast<int>(v.prefixes.size()) == v.required_prefixes);
  CHECK(v.runs_used >= v.required_prefixes);
  CHECK(v.runs_used <= v.budget);
  CHECK(static_cast<int>(v.runs.size()) == v.runs_used);

  // Soundness: every member re-elicits; pairwise distances respect the bound.
  for (const PrefixCandidate& c : v.prefixes.members) CHECK(elicits(m, c.tokens, {1, 2, 3}));
  for (std::size_t i = 0; i < v.prefixes.embeddings.size(); ++i) {
    for (std::size_t j = i + 1; j < v.prefixes.embeddings.size(); ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < v.prefixes.embeddings[i].size(); ++k) {
        dot += v.prefixes.embeddings[i][k] * v.prefixes.embeddings[j][k];
      }
      CHECK(1.0 - dot >= cfg.distinct_threshold - 1e-12);
    }
  }
}

TEST_CASE("audit determinism and thread-count independence") {
  const TableModel m = chain8();
  AuditConfig cfg;
  cfg.gcg = small_search();
  cfg.distinct_threshold = 0.2;
  cfg.master_seed = 11;
  const AuditVerdict a = run_multi_prefix_audit(m, "chain", {1, 2, 3}, cfg);
  const AuditVerdict b = run_multi_prefix_audit(m, "chain", {1, 2, 3}, cfg);
  cfg.threads = 3;
  const AuditVerdict c = run_multi_prefix_audit(m, "chain", {1, 2, 3}, cfg);

  const auto same = [](const AuditVerdict& x, const AuditVerdict& y) {
    CHECK(x.classification == y.classification);
    CHECK(x.runs_used == y.runs_used);
    REQUIRE(x.runs.size() == y.runs.size());
    for (std::size_t i = 0; i < x.runs.size(); ++i) {
      CHECK(x.runs[i].seed == y.runs[i].seed);
      CHECK(x.runs[i].elicited == y.runs[i].elicited);
      CHECK(x.runs[i].prefix == y.runs[i].prefix);
      CHECK(x.runs[i].accepted == y.runs[i].accepted);
    }
    REQUIRE(x.prefixes.size() == y.prefixes.size());
    for (std::size_t i = 0; i < x.prefixes.size(); ++i) {
      CHECK(x.prefixes.members[i].tokens == y.prefixes.members[i].tokens);
    }
  };
  same(a, b);
  same(a, c);
}

TEST_CASE("probe mode runs the full budget without early stopping") {
  const TableModel uniform(8, 2);
  AuditConfig cfg;
  cfg.gcg = small_search();
  cfg.gcg.steps = 3;
  cfg.probe = true;
  const AuditVerdict v = run_multi_prefix_audit(uniform, "ctl", {3, 1, 2}, cfg);
  CHECK(v.required_prefixes == 0);
  CHECK(v.budget == 10);
  CHECK(v.runs_used == 10);
  CHECK(v.classification == AuditClass::NotMemorizedNoSignal);
  for (const RunOutcome& r : v.runs) CHECK_FALSE(r.elicited);
}

TEST_CASE("fail-streak abort cuts the run short") {
  const TableModel uniform(8, 2);
  AuditConfig cfg;
  cfg.gcg = small_search();
  cfg.gcg.steps = 3;
  cfg.probe = true;
  cfg.fail_streak = 3;
  const AuditVerdict v = run_multi_prefix_audit(uniform, "ctl", {3, 1, 2}, cfg);
  CHECK(v.runs_used == 3);
}

TEST_CASE("audit rejects too-short targets") {
  const TableModel m = chain8();
  AuditConfig cfg;
  CHECK_THROWS_AS(run_multi_prefix_audit(m, "x", {1}, cfg), TargetTooShortError);
}
