#pragma once

// Batch orchestration over a corpus: audits target records, probes control
// records over their full budgets, optionally runs the baseline definitions
// and the overlapping-half segment audits, and assembles the report.
// Work parallelizes across sequences; per-sequence results depend only on
// (model, record, config, master seed), so thread count never changes output.

#include <functional>

#include "memaudit/report.hpp"

namespace memaudit {

struct PipelineOptions {
  AuditConfig audit;
  bool with_baselines = false;
  AcrConfig acr;
  SplitPolicy discoverable_policy = SplitPolicy::Any;
  bool with_segments = false;  // audit first/middle/final halves of each target
  int threads = 1;
  std::function<void(const std::string&)> log;  // progress lines, optional
};

AuditReport run_audit_pipeline(const ModelBackend& model, const Corpus& data, const PipelineOptions& options);

}  // namespace memaudit
