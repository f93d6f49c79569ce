// Acceptance suite: a fixed desk-scale battery over the full pipeline. Each
// criterion prints one [PASS]/[FAIL] line; the process exits non-zero if any
// criterion fails. Invoke as: acceptance [path-to-memaudit-cli]

#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <thread>
#include <vector>

#include "memaudit/baselines.hpp"
#include "memaudit/checkpoint.hpp"
#include "memaudit/pipeline.hpp"
#include "fixture.hpp"
#include "oracles.hpp"

using namespace memaudit;

namespace {

int g_failures = 0;

void report_criterion(int number, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %2d: %s\n", pass ? "PASS" : "FAIL", number, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return "<missing:" + path + ">";
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& cli, const std::string& args, const std::string& log_path) {
  const std::string cmd = cli + " " + args + " > " + log_path + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return rc < 0 ? rc : WEXITSTATUS(rc);
}

struct Fmt {
  char buf[512];
  const char* operator()(const char* fmt, ...) {
    va_list ap;
    va_start(ap, fmt);
    std::vsnprintf(buf, sizeof(buf), fmt, ap);
    va_end(ap);
    return buf;
  }
};

}  // namespace

int main(int argc, char** argv) {
  const std::string cli = argc > 1 ? argv[1] : "";
  const int threads = std::min(4u, std::max(1u, std::thread::hardware_concurrency()));
  Fmt fmt;

  const auto work_dir = std::filesystem::temp_directory_path() / "memaudit-acceptance";
  std::filesystem::remove_all(work_dir);
  std::filesystem::create_directories(work_dir);

  // -------------------------------------------------------------------------
  // Shared fixture: 30 upweighted targets (10-30 tokens) plus background,
  // trained on the default micro-transformer; 100 random-token controls
  // probed over their full budgets.
  // -------------------------------------------------------------------------
  std::fprintf(stderr, "-- building and training the separation fixture (threads=%d)\n", threads);
  const double fixture_t0 = now_s();

  fixture::FixtureSpec spec;
  Corpus corpus = fixture::make_fixture_corpus(spec);
  const MicroTransformerConfig model_cfg = fixture::fixture_model_config();
  TrainingMeta train_meta;
  const MicroTransformer model = train_micro_transformer(model_cfg, corpus, 2027, &train_meta);
  std::fprintf(stderr, "-- trained: first-epoch loss %.4f, final loss %.4f (%.0fs)\n",
               train_meta.epoch_losses.front(), train_meta.final_loss, now_s() - fixture_t0);

  Corpus audit_data;
  audit_data.vocab_size = corpus.vocab_size;
  int n_targets = 0;
  for (const Record& rec : corpus.records) {
    if (rec.role == RecordRole::Target) {
      audit_data.records.push_back(rec);
      ++n_targets;
    }
  }
  int dropped_controls = 0;
  for (Record& rec : gen_random_controls(256, 100, 5, 15, 909)) {
    if (appears_in_corpus(corpus, rec.tokens)) {
      ++dropped_controls;
      continue;
    }
    audit_data.records.push_back(std::move(rec));
  }
  const int n_controls = static_cast<int>(audit_data.records.size()) - n_targets;

  PipelineOptions opts;
  opts.audit.gcg.prefix_len = 8;
  opts.audit.gcg.steps = 30;
  opts.audit.gcg.batch = 24;
  opts.audit.gcg.top_k = 64;
  opts.audit.distinct_threshold = 0.3;
  opts.audit.master_seed = 1;
  opts.threads = threads;
  const AuditReport report = run_audit_pipeline(model, audit_data, opts);
  const double fixture_minutes = (now_s() - fixture_t0) / 60.0;
  std::fprintf(stderr, "-- fixture audit complete (%.1f min total)\n", fixture_minutes);

  // -------------------------------------------------------------------------
  // Criterion 1: separation. >= 80% of targets Memorized; zero eliciting
  // prefixes across every control's full budget; runtime bound.
  // -------------------------------------------------------------------------
  {
    int memorized = 0;
    int control_elicitations = 0;
    int control_runs = 0;
    for (const SequenceReport& s : report.sequences) {
      if (s.role == RecordRole::Target && s.verdict->classification == AuditClass::Memorized) ++memorized;
      if (s.role == RecordRole::Control) {
        control_runs += s.verdict->runs_used;
        for (const RunOutcome& r : s.verdict->runs) {
          if (r.elicited) ++control_elicitations;
        }
      }
    }
    const double frac = static_cast<double>(memorized) / n_targets;
    const bool pass = frac >= 0.8 && control_elicitations == 0 && fixture_minutes <= 45.0;
    report_criterion(1, pass,
                     fmt("separation: %d/%d targets memorized (%.0f%%), %d/%d eliciting control runs "
                         "(%d controls, %d screened out), %.1f min (bound 45)",
                         memorized, n_targets, 100.0 * frac, control_elicitations, control_runs, n_controls,
                         dropped_controls, fixture_minutes));
  }

  // -------------------------------------------------------------------------
  // Criterion 2: one-sided Mann-Whitney U on raw ASR, memorized vs control.
  // -------------------------------------------------------------------------
  {
    const std::vector<double> mem = group_rates(report, "memorized");
    const std::vector<double> ctl = group_rates(report, "control");
    bool pass = false;
    std::string detail = "statistical gap: missing a group";
    if (!mem.empty() && !ctl.empty()) {
      const MwuResult r = mann_whitney_u(mem, ctl);
      pass = r.p_value < 0.01 && r.rank_biserial > 0.8;
      detail = fmt("statistical gap: U=%.1f p=%.3g r=%.4f (%s; n1=%zu n2=%zu; need p<0.01, r>0.8)", r.u, r.p_value,
                   r.rank_biserial, r.method == MwuMethod::Exact ? "exact" : "normal-approx", r.n1, r.n2);
    }
    report_criterion(2, pass, detail);
  }

  // -------------------------------------------------------------------------
  // Criterion 3: scoring matches a brute-force oracle on random table models.
  // -------------------------------------------------------------------------
  {
    Rng rng(0x5c03eULL);
    int models_checked = 0;
    double worst_rel = 0.0;
    bool pass = true;
    while (models_checked < 50) {
      const int vocab = 2 + static_cast<int>(rng.below(7));
      const int order = 1 + static_cast<int>(rng.below(2));
      TableModel m(vocab, order);
      std::vector<TokenSeq> contexts;
      for (Token t = 0; t < vocab; ++t) contexts.push_back({t});
      if (order == 2) {
        for (Token a = 0; a < vocab; ++a) {
          for (Token b = 0; b < vocab; ++b) contexts.push_back({a, b});
        }
      }
      for (const TokenSeq& ctx : contexts) {
        std::vector<double> row(static_cast<std::size_t>(vocab), 0.0);
        if (rng.below(8) == 0) {
          row[rng.below(static_cast<std::uint64_t>(vocab))] = 1.0;
        } else {
          double sum = 0.0;
          for (double& p : row) {
            p = rng.below(6) == 0 ? 0.0 : rng.unit() + 1e-3;
            sum += p;
          }
          if (sum == 0.0) {
            row[0] = 1.0;
          } else {
            for (double& p : row) p /= sum;
            auto mx = std::max_element(row.begin(), row.end());
            double total = 0.0;
            for (double p : row) total += p;
            *mx += 1.0 - total;
          }
        }
        m.set_row(ctx, std::move(row));
      }
      TokenSeq s;
      const auto len = 2 + rng.below(5);
      for (std::size_t i = 0; i < len; ++i) s.push_back(static_cast<Token>(rng.below(static_cast<std::uint64_t>(vocab))));

      const MemorizationProfile got = memorization_score(m, s);
      const oracles::TableScore want = oracles::table_score_oracle(m, s);
      const auto rel = [](double a, double b) {
        const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
        return std::abs(a - b) / scale;
      };
      for (std::size_t i = 0; i < want.p_avg.size(); ++i) {
        worst_rel = std::max({worst_rel, rel(got.p_avg[i], want.p_avg[i]), rel(got.r[i], want.r[i]),
                              rel(got.sim[i], want.sim[i])});
      }
      worst_rel = std::max(worst_rel, rel(got.eta, want.eta));
      if (worst_rel > 1e-9 || got.threshold_p != want.threshold_p) {
        pass = false;
        break;
      }
      ++models_checked;
    }
    report_criterion(3, pass, fmt("scoring oracle: %d random table models, worst relative error %.2e (bound 1e-9)",
                                  models_checked, worst_rel));
  }

  // -------------------------------------------------------------------------
  // Criterion 4: input gradients vs central finite differences.
  // -------------------------------------------------------------------------
  {
    const double t0 = now_s();
    MicroTransformerConfig cfg;
    cfg.vocab_size = 48;
    cfg.embed_dim = 16;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.context_len = 32;
    cfg.seed = 7;
    const MicroTransformer tiny(cfg);
    Rng rng(0x44adc8ecULL);
    double max_rel = 0.0;
    int pairs = 0;
    for (; pairs < 20; ++pairs) {
      TokenSeq prefix, target;
      const auto plen = 2 + rng.below(2);
      const auto tlen = 2 + rng.below(2);
      for (std::size_t i = 0; i < plen; ++i) prefix.push_back(static_cast<Token>(rng.below(48)));
      for (std::size_t i = 0; i < tlen; ++i) target.push_back(static_cast<Token>(rng.below(48)));

      const auto grad = tiny.input_token_gradient(prefix, target);
      std::vector<std::vector<double>> mix(prefix.size(), std::vector<double>(48, 0.0));
      for (std::size_t i = 0; i < prefix.size(); ++i) mix[i][static_cast<std::size_t>(prefix[i])] = 1.0;
      const double h = 1e-3;
      for (std::size_t i = 0; i < prefix.size(); ++i) {
        for (int v = 0; v < 48; ++v) {
          mix[i][static_cast<std::size_t>(v)] += h;
          const double up = tiny.target_nll_mixed(mix, target);
          mix[i][static_cast<std::size_t>(v)] -= 2 * h;
          const double down = tiny.target_nll_mixed(mix, target);
          mix[i][static_cast<std::size_t>(v)] += h;
          const double fd = (up - down) / (2 * h);
          const double g = grad[i][static_cast<std::size_t>(v)];
          max_rel = std::max(max_rel, std::abs(g - fd) / std::max({std::abs(fd), std::abs(g), 1e-3}));
        }
      }
    }
    const double secs = now_s() - t0;
    const bool pass = max_rel < 1e-4 && secs < 60.0;
    report_criterion(4, pass, fmt("gradient check: %d random (prefix, target) pairs, max relative error %.2e "
                                  "(bound 1e-4), %.1fs (bound 60)",
                                  pairs, max_rel, secs));
  }

  // -------------------------------------------------------------------------
  // Criterion 5: threshold exactness plus budget/distinctness laws on every
  // verdict of the fixture report.
  // -------------------------------------------------------------------------
  {
    Rng rng(0x777e5full);
    bool threshold_ok = true;
    int checked = 0;
    while (checked < 1000) {
      const double eta = rng.unit() * 3.0;
      const auto len = 2 + rng.below(99);
      const double x = eta * static_cast<double>(len);
      if (std::abs(x - std::nearbyint(x)) < 1e-9) continue;  // below the snap guard, ceil is ambiguous in float
      if (prefix_threshold(eta, len) != oracles::exact_rational_ceil(eta, static_cast<long long>(len))) {
        threshold_ok = false;
        break;
      }
      ++checked;
    }

    bool laws_ok = true;
    std::string law_breach;
    for (const SequenceReport& s : report.sequences) {
      const AuditVerdict& v = *s.verdict;
      const int p = v.required_prefixes;
      const int expected_budget = v.probe_mode ? std::max(10, 2 * p) : (p >= 1 ? std::max(10, 2 * p) : 0);
      if (v.budget != expected_budget || v.runs_used > v.budget) {
        laws_ok = false;
        law_breach = "budget law broken for " + s.id;
        break;
      }
      if (v.classification == AuditClass::Memorized) {
        if (static_cast<int>(v.prefixes.members.size()) != p || v.runs_used < p) {
          laws_ok = false;
          law_breach = "memorized set size mismatch for " + s.id;
          break;
        }
        // Re-verify soundness and pairwise distinctness from the serialized
        // prefix tokens.
        std::vector<std::vector<double>> embs;
        for (const PrefixCandidate& c : v.prefixes.members) {
          if (!elicits(model, c.tokens, s.tokens)) {
            laws_ok = false;
            law_breach = "stored prefix fails to re-elicit " + s.id;
            break;
          }
          embs.push_back(model.embed_tokens(c.tokens));
        }
        for (std::size_t i = 0; laws_ok && i < embs.size(); ++i) {
          for (std::size_t j = i + 1; j < embs.size(); ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < embs[i].size(); ++k) dot += embs[i][k] * embs[j][k];
            if (1.0 - dot < opts.audit.distinct_threshold - 1e-12) {
              laws_ok = false;
              law_breach = "pairwise distance below threshold for " + s.id;
            }
          }
        }
        if (!laws_ok) break;
      }
    }
    report_criterion(5, threshold_ok && laws_ok,
                     fmt("threshold and budget laws: %d random ceil pairs exact=%s; verdict laws over %zu verdicts %s%s",
                         checked, threshold_ok ? "yes" : "NO", report.sequences.size(), laws_ok ? "hold" : "BROKEN: ",
                         law_breach.c_str()));
  }

  // -------------------------------------------------------------------------
  // Criterion 6: efficiency accounting.
  // -------------------------------------------------------------------------
  {
    std::vector<double> budgets, runs;
    for (const SequenceReport& s : report.sequences) {
      if (s.role != RecordRole::Target || s.verdict->classification != AuditClass::Memorized) continue;
      budgets.push_back(static_cast<double>(s.verdict->budget));
      runs.push_back(static_cast<double>(s.verdict->runs_used));
    }
    bool pass = false;
    std::string detail = "efficiency: no memorized sequences";
    if (!budgets.empty()) {
      const EfficiencyStats fixture_eff = efficiency(budgets, runs);
      const EfficiencyStats reference = efficiency(std::vector<double>{10.08}, std::vector<double>{3.76});
      const bool early_stop = fixture_eff.avg_runs < fixture_eff.avg_budget;
      const bool row_ok = std::abs(reference.ratio - 0.373) < 5e-4;
      pass = early_stop && row_ok;
      detail = fmt("efficiency: memorized avg_runs %.2f < avg_budget %.2f = %s; reference inputs 3.76/10.08 -> %.4f "
                   "(want 0.373+-5e-4)",
                   fixture_eff.avg_runs, fixture_eff.avg_budget, early_stop ? "yes" : "NO", reference.ratio);
    }
    report_criterion(6, pass, detail);
  }

  // -------------------------------------------------------------------------
  // Criterion 7: baseline coherence on exhaustively-scannable models.
  // -------------------------------------------------------------------------
  {
    AcrConfig acr_cfg;
    acr_cfg.search.prefix_len = 2;
    acr_cfg.search.steps = 40;
    acr_cfg.search.batch = 8;
    acr_cfg.search.top_k = 4;

    TableModel chain(4, 1);
    for (Token k = 0; k < 4; ++k) chain.set_deterministic({k}, (k + 1) % 4);
    TokenSeq y;
    for (int i = 0; i < 20; ++i) y.push_back((1 + i) % 4);
    const int true_min_chain = oracles::exhaustive_min_prompt_len(chain, y, 2);
    const auto found_chain = min_prompt_length_search(chain, y, acr_cfg, 2);
    const AcrResult acr_chain = acr(chain, y, acr_cfg);

    TableModel pair_lock(4, 2);
    pair_lock.set_deterministic({0, 1}, 2);
    pair_lock.set_deterministic({1, 2}, 3);
    const TokenSeq y2{2, 3};
    const int true_min_pair = oracles::exhaustive_min_prompt_len(pair_lock, y2, 2);
    const auto found_pair = min_prompt_length_search(pair_lock, y2, acr_cfg, 2);
    const AcrResult acr_pair = acr(pair_lock, y2, acr_cfg);

    const bool pass = true_min_chain == 1 && found_chain && *found_chain == 1 && acr_chain.memorized &&
                      *acr_chain.ratio == 20.0 && true_min_pair == 2 && found_pair && *found_pair == 2 &&
                      acr_pair.ratio && *acr_pair.ratio == 1.0 && !acr_pair.memorized;
    report_criterion(7, pass,
                     fmt("baseline coherence: chain min len search=%d truth=%d ACR=%.0f memorized=%s; "
                         "pair-lock search=%d truth=%d ACR=%.1f memorized=%s (strict > tau)",
                         found_chain.value_or(-1), true_min_chain, acr_chain.ratio.value_or(-1),
                         acr_chain.memorized ? "yes" : "no", found_pair.value_or(-1), true_min_pair,
                         acr_pair.ratio.value_or(-1), acr_pair.memorized ? "yes" : "NO"));
  }

  // -------------------------------------------------------------------------
  // Criterion 8: Mann-Whitney exactness against literal enumeration.
  // -------------------------------------------------------------------------
  {
    Rng rng(0x8a11bull);
    int samples = 0;
    double worst = 0.0;
    bool pass = true;
    while (samples < 100 && pass) {
      const std::size_t n1 = 1 + rng.below(6);
      const std::size_t n2 = 1 + rng.below(6);
      std::vector<double> a(n1), b(n2);
      for (double& x : a) x = static_cast<double>(rng.below(11)) / 10.0;
      for (double& x : b) x = static_cast<double>(rng.below(11)) / 10.0;
      const MwuResult r = mann_whitney_u(a, b);
      if (r.method != MwuMethod::Exact) {
        pass = false;
        break;
      }
      const double want = oracles::mwu_exact_p_enumeration(r.u, n1, n2);
      worst = std::max(worst, std::abs(r.p_value - want));
      if (worst > 1e-12) pass = false;
      ++samples;
    }
    const MwuResult sep = mann_whitney_u({4, 5, 6}, {1, 2, 3});
    const bool sep_ok = std::abs(sep.p_value - 0.05) < 1e-12 && sep.u == 9.0;
    report_criterion(8, pass && sep_ok,
                     fmt("statistical kernel: %d random samples vs enumeration, worst |dp| %.2e; "
                         "3v3 separation p=%.4f (want 0.05)",
                         samples, worst, sep.p_value));
  }

  // -------------------------------------------------------------------------
  // Criterion 9: byte-identical checkpoints and reports via the CLI.
  // -------------------------------------------------------------------------
  {
    bool pass = false;
    std::string detail = "determinism: CLI path not supplied";
    if (!cli.empty()) {
      const std::string dir = work_dir.string();
      fixture::FixtureSpec small;
      small.n_targets = 4;
      small.len_lo = 10;
      small.len_hi = 14;
      small.target_weight = 10;
      small.pad_weight = 5;
      small.backgrounds = 8;
      const Corpus small_corpus = fixture::make_fixture_corpus(small);
      save_jsonl(small_corpus, dir + "/train.jsonl");
      Corpus targets_only;
      for (const Record& rec : small_corpus.records) {
        if (rec.role == RecordRole::Target) targets_only.records.push_back(rec);
      }
      save_jsonl(targets_only, dir + "/targets.jsonl");

      const std::string train_args = "--data " + dir + "/train.jsonl --seed 5 --epochs 25 --lr 2e-3 --quiet";
      const std::string audit_args =
          " --data " + dir + "/targets.jsonl --seed 9 --gcg-steps 20 --gcg-batch 16 --controls 4 --threads " +
          std::to_string(threads);
      bool ok = true;
      ok &= run_cli(cli, "train " + train_args + " --out " + dir + "/m1.mtckpt", dir + "/train1.log") == 0;
      ok &= run_cli(cli, "train " + train_args + " --out " + dir + "/m2.mtckpt", dir + "/train2.log") == 0;
      ok &= run_cli(cli, "audit --model " + dir + "/m1.mtckpt" + audit_args + " --out " + dir + "/r1.json",
                    dir + "/audit1.log") == 0;
      ok &= run_cli(cli, "audit --model " + dir + "/m1.mtckpt" + audit_args + " --out " + dir + "/r2.json",
                    dir + "/audit2.log") == 0;
      ok &= run_cli(cli, "stats --report " + dir + "/r1.json --groups memorized,control --out " + dir + "/s1.json",
                    dir + "/stats1.log") == 0;
      ok &= run_cli(cli, "stats --report " + dir + "/r2.json --groups memorized,control --out " + dir + "/s2.json",
                    dir + "/stats2.log") == 0;

      const bool ckpt_same = ok && read_file(dir + "/m1.mtckpt") == read_file(dir + "/m2.mtckpt");
      const bool report_same = ok && read_file(dir + "/r1.json") == read_file(dir + "/r2.json");
      const bool stats_same = ok && read_file(dir + "/s1.json") == read_file(dir + "/s2.json");

      // Spot-check CLI error contracts alongside the determinism runs.
      const int usage_rc = run_cli(cli, "audit --no-such-flag", dir + "/usage.log");
      const int data_rc =
          run_cli(cli, "audit --model " + dir + "/m1.mtckpt --data " + dir + "/nonexistent.jsonl --out " + dir +
                           "/x.json",
                  dir + "/data_err.log");
      MicroTransformerConfig narrow_cfg;
      narrow_cfg.vocab_size = 200;
      save_checkpoint(MicroTransformer(narrow_cfg), TrainingMeta{}, dir + "/narrow.mtckpt");
      const int vocab_rc = run_cli(
          cli, "audit --model " + dir + "/narrow.mtckpt --data " + dir + "/targets.jsonl --out " + dir + "/x.json",
          dir + "/vocab_err.log");
      const std::string vocab_err = read_file(dir + "/vocab_err.log");
      const bool exit_codes_ok = usage_rc == 1 && data_rc == 2 && vocab_rc == 2 &&
                                 vocab_err.find("256") != std::string::npos &&
                                 vocab_err.find("200") != std::string::npos;

      pass = ok && ckpt_same && report_same && stats_same && exit_codes_ok;
      detail = fmt("determinism: cli_ok=%s checkpoints identical=%s reports identical=%s stats identical=%s "
                   "exit codes (usage=%d data=%d vocab-mismatch=%d)",
                   ok ? "yes" : "NO", ckpt_same ? "yes" : "NO", report_same ? "yes" : "NO", stats_same ? "yes" : "NO",
                   usage_rc, data_rc, vocab_rc);
    }
    report_criterion(9, pass, detail);
  }

  // -------------------------------------------------------------------------
  // Criterion 10: split_halves contract and the partial-audit contingency.
  // -------------------------------------------------------------------------
  {
    bool split_ok = true;
    for (std::size_t n = 4; n <= 64 && split_ok; ++n) {
      TokenSeq s(n);
      for (std::size_t i = 0; i < n; ++i) s[i] = static_cast<Token>(i % 251);
      const HalfSplits parts = split_halves(s);
      const std::size_t h = (n + 1) / 2;
      const std::size_t m = (n - h) / 2;
      split_ok = parts.first.size() == h && parts.middle.size() == h && parts.final.size() == h &&
                 std::equal(parts.first.begin(), parts.first.end(), s.begin()) &&
                 std::equal(parts.middle.begin(), parts.middle.end(), s.begin() + static_cast<std::ptrdiff_t>(m)) &&
                 std::equal(parts.final.begin(), parts.final.end(), s.end() - static_cast<std::ptrdiff_t>(h));
    }

    Corpus partial_data;
    partial_data.vocab_size = audit_data.vocab_size;
    for (const Record& rec : corpus.records) {
      if (rec.role == RecordRole::Target) partial_data.records.push_back(rec);
      if (partial_data.records.size() == 8) break;
    }
    PipelineOptions popts = opts;
    popts.with_segments = true;
    // Non-memorized halves would otherwise burn their whole budgets; the
    // fail-streak abort is the sanctioned shortcut for such sets.
    popts.audit.fail_streak = 3;
    popts.audit.gcg.steps = 20;
    popts.audit.gcg.batch = 16;
    const AuditReport partial_report = run_audit_pipeline(model, partial_data, popts);
    bool contingency_ok = partial_report.aggregates["partial"].is_object();
    std::string cells;
    if (contingency_ok) {
      for (const char* pos : {"first", "middle", "final"}) {
        const auto& p = partial_report.aggregates["partial"][pos];
        const int total = p["wp"].get<int>() + p["w_np"].get<int>() + p["nw_p"].get<int>() + p["nw_np"].get<int>();
        if (total != static_cast<int>(partial_report.sequences.size())) contingency_ok = false;
        cells += fmt("%s[%d,%d,%d,%d] ", pos, p["wp"].get<int>(), p["w_np"].get<int>(), p["nw_p"].get<int>(),
                     p["nw_np"].get<int>());
      }
    }
    report_criterion(10, split_ok && contingency_ok,
                     fmt("partial segments: split contract |s| in [4,64] %s; contingency over %zu sequences %s-> %s",
                         split_ok ? "holds" : "BROKEN", partial_report.sequences.size(),
                         contingency_ok ? "sums " : "BROKEN ", cells.c_str()));
  }

  std::printf("%d/10 criteria passed\n", 10 - g_failures);
  return g_failures == 0 ? 0 : 1;
}
