#include "memaudit/pipeline.hpp"

#include <atomic>
#include <mutex>
#include <thread>

#include "memaudit/rng.hpp"

namespace memaudit {

namespace {

SequenceReport process_record(const ModelBackend& model, const Record& rec, const PipelineOptions& options) {
  SequenceReport out;
  out.id = rec.id;
  out.role = rec.role;
  out.tokens = rec.tokens;
  out.text = escape_tokens(rec.tokens);

  AuditConfig cfg = options.audit;
  cfg.probe = rec.role == RecordRole::Control;
  AuditVerdict verdict = run_multi_prefix_audit(model, rec.id, rec.tokens, cfg);

  // Embedding geometry over eliciting run prefixes, kept with the record so
  // aggregate histograms can be rebuilt without the model.
  std::vector<std::vector<double>> embs;
  for (const RunOutcome& r : verdict.runs) {
    if (r.elicited && !r.prefix.empty()) embs.push_back(model.embed_tokens(r.prefix));
  }
  const std::vector<double> target_emb = model.embed_tokens(rec.tokens);
  for (std::size_t i = 0; i < embs.size(); ++i) {
    for (std::size_t j = i + 1; j < embs.size(); ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < embs[i].size(); ++k) dot += embs[i][k] * embs[j][k];
      out.prefix_pair_distances.push_back(1.0 - dot);
    }
    double dot = 0.0;
    for (std::size_t k = 0; k < embs[i].size(); ++k) dot += embs[i][k] * target_emb[k];
    out.prefix_target_similarities.push_back(dot);
  }

  if (rec.role == RecordRole::Target) {
    if (options.with_baselines) {
      out.discoverable = discoverable_check(model, rec.tokens, options.discoverable_policy);
      AcrConfig acr_cfg = options.acr;
      acr_cfg.master_seed = derive_run_seed(options.acr.master_seed, rec.id, 0x61637200ULL);
      out.compressible = acr(model, rec.tokens, acr_cfg);
    }
    if (options.with_segments && rec.tokens.size() >= 4) {
      const HalfSplits parts = split_halves(rec.tokens);
      const std::pair<const char*, const TokenSeq*> segs[] = {
          {"first", &parts.first}, {"middle", &parts.middle}, {"final", &parts.final}};
      for (const auto& [name, tokens] : segs) {
        AuditConfig seg_cfg = options.audit;
        seg_cfg.probe = false;
        SegmentAudit seg;
        seg.position = name;
        seg.verdict = run_multi_prefix_audit(model, rec.id + "#" + name, *tokens, seg_cfg);
        out.segments.push_back(std::move(seg));
      }
    }
  }

  out.verdict = std::move(verdict);
  return out;
}

}  // namespace

AuditReport run_audit_pipeline(const ModelBackend& model, const Corpus& data, const PipelineOptions& options) {
  AuditReport report;

  std::vector<std::size_t> work;
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    if (data.records[i].role == RecordRole::Background) continue;  // training-only records
    work.push_back(i);
  }
  report.sequences.resize(work.size());

  const int threads = std::max(1, options.threads);
  std::mutex log_mutex;
  const auto log_line = [&](const std::string& line) {
    if (!options.log) return;
    const std::lock_guard<std::mutex> lock(log_mutex);
    options.log(line);
  };

  if (threads == 1 || work.size() <= 1) {
    PipelineOptions opts = options;
    if (work.size() <= 1) opts.audit.threads = threads;  // single sequence: parallelize its runs instead
    for (std::size_t w = 0; w < work.size(); ++w) {
      const Record& rec = data.records[work[w]];
      report.sequences[w] = process_record(model, rec, opts);
      log_line("audited " + rec.id + ": " + to_string(report.sequences[w].verdict->classification));
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    std::exception_ptr first_error;
    std::mutex error_mutex;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&]() {
        for (;;) {
          const std::size_t w = next.fetch_add(1);
          if (w >= work.size()) return;
          const Record& rec = data.records[work[w]];
          try {
            report.sequences[w] = process_record(model, rec, options);
            log_line("audited " + rec.id + ": " + to_string(report.sequences[w].verdict->classification));
          } catch (...) {
            const std::lock_guard<std::mutex> lock(error_mutex);
            if (!first_error) first_error = std::current_exception();
            return;
          }
        }
      });
    }
    for (std::thread& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  report.aggregates = compute_aggregates(report, "memorized", "control");
  return report;
}

}  // namespace memaudit
