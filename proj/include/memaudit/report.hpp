#pragma once

// The audit report: one canonical JSON document per run plus CSV histogram
// sidecars. Every aggregate block is a pure function of the per-sequence
// records, so reports can be re-verified and re-aggregated offline.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "memaudit/baselines.hpp"
#include "memaudit/corpus.hpp"
#include "memaudit/search.hpp"
#include "memaudit/stats.hpp"

namespace memaudit {

struct SegmentAudit {
  std::string position;  // first | middle | final
  AuditVerdict verdict;
};

struct SequenceReport {
  std::string id;
  RecordRole role = RecordRole::Target;
  TokenSeq tokens;
  std::string text;  // escaped byte rendition, display only
  std::optional<AuditVerdict> verdict;
  // Derived per-sequence embedding geometry over eliciting run prefixes,
  // stored so the aggregate histograms are recomputable without the model.
  std::vector<double> prefix_pair_distances;
  std::vector<double> prefix_target_similarities;
  std::optional<DiscoverableResult> discoverable;
  std::optional<AcrResult> compressible;
  std::vector<SegmentAudit> segments;
};

struct AuditReport {
  int format_version = 1;
  nlohmann::ordered_json config;  // knob/seed/checkpoint snapshot
  std::vector<SequenceReport> sequences;
  nlohmann::ordered_json aggregates;
};

nlohmann::ordered_json to_json(const AuditReport& report);
AuditReport report_from_json(const nlohmann::ordered_json& j);

// Recomputes the aggregate block (ASR per class, Mann-Whitney between the two
// named groups, efficiency, histograms, partial contingency) from the
// per-sequence records. Histogram width applies to both histograms.
nlohmann::ordered_json compute_aggregates(const AuditReport& report, const std::string& group_a,
                                          const std::string& group_b, double histogram_width = 0.065);

// Rates per named group: memorized | not-memorized | target | control
// (sequences with zero executed runs contribute no rate).
std::vector<double> group_rates(const AuditReport& report, const std::string& group);

void write_report(const AuditReport& report, const std::string& path, bool with_csv_sidecars = true);
AuditReport read_report(const std::string& path);

// True when the stored aggregates equal a fresh recompute, byte for byte.
bool verify_report_consistency(const AuditReport& report, std::string* diff = nullptr);

std::string render_summary(const AuditReport& report);

}  // namespace memaudit
