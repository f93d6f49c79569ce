#include "memaudit/report.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace memaudit {

using nlohmann::ordered_json;

namespace {

ordered_json profile_to_json(const MemorizationProfile& p) {
  return ordered_json{{"eta", p.eta},     {"threshold_p", p.threshold_p}, {"eta_min", p.eta_min},
                      {"epsilon", p.epsilon}, {"p_avg", p.p_avg},          {"r", p.r},
                      {"sim", p.sim}};
}

MemorizationProfile profile_from_json(const ordered_json& j, const TokenSeq& target) {
  MemorizationProfile p;
  p.target = target;
  p.eta = j.at("eta").get<double>();
  p.threshold_p = j.at("threshold_p").get<int>();
  p.eta_min = j.at("eta_min").get<double>();
  p.epsilon = j.at("epsilon").get<double>();
  p.p_avg = j.at("p_avg").get<std::vector<double>>();
  p.r = j.at("r").get<std::vector<double>>();
  p.sim = j.at("sim").get<std::vector<double>>();
  return p;
}

ordered_json verdict_to_json(const AuditVerdict& v) {
  ordered_json j;
  j["target_id"] = v.target_id;
  j["classification"] = to_string(v.classification);
  j["probe_mode"] = v.probe_mode;
  j["required_prefixes"] = v.required_prefixes;
  j["budget"] = v.budget;
  j["runs_used"] = v.runs_used;
  j["profile"] = profile_to_json(v.profile);
  j["distinct_threshold"] = v.prefixes.threshold;
  ordered_json prefixes = ordered_json::array();
  for (const PrefixCandidate& c : v.prefixes.members) {
    prefixes.push_back({{"tokens", c.tokens},
                        {"text", escape_tokens(c.tokens)},
                        {"loss", c.loss},
                        {"seed", c.seed},
                        {"step_found", c.step_found}});
  }
  j["prefixes"] = std::move(prefixes);
  ordered_json runs = ordered_json::array();
  for (const RunOutcome& r : v.runs) {
    ordered_json jr{{"run_index", r.run_index}, {"seed", r.seed},         {"elicited", r.elicited},
                    {"step_found", r.step_found}, {"loss", r.loss},       {"accepted", r.accepted},
                    {"min_distance", r.min_distance}};
    if (r.elicited) {
      jr["prefix"] = r.prefix;
      jr["prefix_text"] = escape_tokens(r.prefix);
    }
    runs.push_back(std::move(jr));
  }
  j["runs"] = std::move(runs);
  return j;
}

AuditClass classification_from_string(const std::string& s) {
  if (s == "memorized") return AuditClass::Memorized;
  if (s == "not-memorized-no-signal") return AuditClass::NotMemorizedNoSignal;
  if (s == "not-memorized-search-failed") return AuditClass::NotMemorizedSearchFailed;
  throw DataFormatError("unknown classification: " + s);
}

AuditVerdict verdict_from_json(const ordered_json& j, const TokenSeq& target) {
  AuditVerdict v;
  v.target_id = j.at("target_id").get<std::string>();
  v.classification = classification_from_string(j.at("classification").get<std::string>());
  v.probe_mode = j.at("probe_mode").get<bool>();
  v.required_prefixes = j.at("required_prefixes").get<int>();
  v.budget = j.at("budget").get<int>();
  v.runs_used = j.at("runs_used").get<int>();
  v.profile = profile_from_json(j.at("profile"), target);
  v.prefixes.threshold = j.at("distinct_threshold").get<double>();
  for (const auto& jc : j.at("prefixes")) {
    PrefixCandidate c;
    c.tokens = jc.at("tokens").get<TokenSeq>();
    c.loss = jc.at("loss").get<double>();
    c.seed = jc.at("seed").get<std::uint64_t>();
    c.step_found = jc.at("step_found").get<int>();
    c.elicits = true;
    v.prefixes.members.push_back(std::move(c));
  }
  for (const auto& jr : j.at("runs")) {
    RunOutcome r;
    r.run_index = jr.at("run_index").get<int>();
    r.seed = jr.at("seed").get<std::uint64_t>();
    r.elicited = jr.at("elicited").get<bool>();
    r.step_found = jr.at("step_found").get<int>();
    r.loss = jr.at("loss").get<double>();
    r.accepted = jr.at("accepted").get<bool>();
    r.min_distance = jr.at("min_distance").get<double>();
    if (jr.contains("prefix")) r.prefix = jr.at("prefix").get<TokenSeq>();
    v.runs.push_back(std::move(r));
  }
  return v;
}

ordered_json discoverable_to_json(const DiscoverableResult& d) {
  ordered_json j{{"memorized", d.memorized}};
  j["witness_split"] = d.witness_split ? ordered_json(*d.witness_split) : ordered_json(nullptr);
  return j;
}

ordered_json acr_to_json(const AcrResult& a) {
  ordered_json j;
  j["target_len"] = a.target_len;
  j["min_prompt_len"] = a.min_prompt_len ? ordered_json(*a.min_prompt_len) : ordered_json(nullptr);
  j["ratio"] = a.ratio ? ordered_json(*a.ratio) : ordered_json(nullptr);
  j["tau"] = a.tau;
  j["memorized"] = a.memorized;
  return j;
}

ordered_json histogram_to_json(const Histogram& h) {
  return ordered_json{{"lo", h.lo}, {"width", h.width}, {"counts", h.counts}, {"total", h.total}};
}

ordered_json group_stats_to_json(const GroupStats& g) {
  return ordered_json{{"label", g.label}, {"n", g.rates.size()}, {"rates", g.rates}, {"mean", g.mean},
                      {"median", g.median}};
}

}  // namespace

ordered_json to_json(const AuditReport& report) {
  ordered_json j;
  j["format_version"] = report.format_version;
  j["config"] = report.config;
  ordered_json seqs = ordered_json::array();
  for (const SequenceReport& s : report.sequences) {
    ordered_json js;
    js["id"] = s.id;
    js["role"] = to_string(s.role);
    js["tokens"] = s.tokens;
    js["text"] = s.text;
    if (s.verdict) js["verdict"] = verdict_to_json(*s.verdict);
    js["prefix_pair_distances"] = s.prefix_pair_distances;
    js["prefix_target_similarities"] = s.prefix_target_similarities;
    if (s.discoverable) js["discoverable"] = discoverable_to_json(*s.discoverable);
    if (s.compressible) js["compressible"] = acr_to_json(*s.compressible);
    if (!s.segments.empty()) {
      ordered_json segs = ordered_json::array();
      for (const SegmentAudit& seg : s.segments) {
        segs.push_back({{"position", seg.position},
                        {"tokens", seg.verdict.profile.target},
                        {"verdict", verdict_to_json(seg.verdict)}});
      }
      js["segments"] = std::move(segs);
    }
    seqs.push_back(std::move(js));
  }
  j["sequences"] = std::move(seqs);
  j["aggregates"] = report.aggregates;
  return j;
}

AuditReport report_from_json(const ordered_json& j) {
  AuditReport report;
  report.format_version = j.at("format_version").get<int>();
  if (report.format_version != 1) throw DataFormatError("unsupported report format_version");
  report.config = j.at("config");
  for (const auto& js : j.at("sequences")) {
    SequenceReport s;
    s.id = js.at("id").get<std::string>();
    s.role = record_role_from_string(js.at("role").get<std::string>());
    s.tokens = js.at("tokens").get<TokenSeq>();
    s.text = js.at("text").get<std::string>();
    if (js.contains("verdict")) s.verdict = verdict_from_json(js.at("verdict"), s.tokens);
    s.prefix_pair_distances = js.at("prefix_pair_distances").get<std::vector<double>>();
    s.prefix_target_similarities = js.at("prefix_target_similarities").get<std::vector<double>>();
    if (js.contains("discoverable")) {
      DiscoverableResult d;
      d.memorized = js.at("discoverable").at("memorized").get<bool>();
      if (!js.at("discoverable").at("witness_split").is_null()) {
        d.witness_split = js.at("discoverable").at("witness_split").get<int>();
      }
      s.discoverable = d;
    }
    if (js.contains("compressible")) {
      const auto& ja = js.at("compressible");
      AcrResult a;
      a.target_len = ja.at("target_len").get<std::size_t>();
      if (!ja.at("min_prompt_len").is_null()) a.min_prompt_len = ja.at("min_prompt_len").get<int>();
      if (!ja.at("ratio").is_null()) a.ratio = ja.at("ratio").get<double>();
      a.tau = ja.at("tau").get<double>();
      a.memorized = ja.at("memorized").get<bool>();
      s.compressible = a;
    }
    if (js.contains("segments")) {
      for (const auto& jseg : js.at("segments")) {
        SegmentAudit seg;
        seg.position = jseg.at("position").get<std::string>();
        seg.verdict = verdict_from_json(jseg.at("verdict"), jseg.at("tokens").get<TokenSeq>());
        s.segments.push_back(std::move(seg));
      }
    }
    report.sequences.push_back(std::move(s));
  }
  report.aggregates = j.value("aggregates", ordered_json::object());
  return report;
}

std::vector<double> group_rates(const AuditReport& report, const std::string& group) {
  std::vector<double> rates;
  for (const SequenceReport& s : report.sequences) {
    if (!s.verdict || s.verdict->runs_used == 0) continue;
    const bool is_target = s.role == RecordRole::Target;
    const bool is_memorized = s.verdict->classification == AuditClass::Memorized;
    bool in_group = false;
    if (group == "memorized") {
      in_group = is_target && is_memorized;
    } else if (group == "not-memorized") {
      in_group = is_target && !is_memorized;
    } else if (group == "target") {
      in_group = is_target;
    } else if (group == "control") {
      in_group = s.role == RecordRole::Control;
    } else {
      throw AuditError("unknown group: " + group + " (expected memorized|not-memorized|target|control)");
    }
    if (!in_group) continue;
    int elicited = 0;
    for (const RunOutcome& r : s.verdict->runs) {
      if (r.elicited) ++elicited;
    }
    rates.push_back(static_cast<double>(elicited) / static_cast<double>(s.verdict->runs_used));
  }
  return rates;
}

ordered_json compute_aggregates(const AuditReport& report, const std::string& group_a, const std::string& group_b,
                                double histogram_width) {
  ordered_json agg;

  ordered_json asr;
  for (const std::string& g : {std::string("memorized"), std::string("not-memorized"), std::string("control")}) {
    std::vector<double> rates = group_rates(report, g);
    if (!rates.empty()) asr[g] = group_stats_to_json(make_group_stats(g, std::move(rates)));
  }
  agg["asr"] = std::move(asr);

  {
    std::vector<double> ra = group_rates(report, group_a);
    std::vector<double> rb = group_rates(report, group_b);
    if (!ra.empty() && !rb.empty()) {
      const MwuResult m = mann_whitney_u(ra, rb);
      agg["mwu"] = ordered_json{{"groups", {group_a, group_b}},
                                {"u", m.u},
                                {"p_value", m.p_value},
                                {"method", m.method == MwuMethod::Exact ? "exact" : "normal-approx"},
                                {"rank_biserial", m.rank_biserial},
                                {"n1", m.n1},
                                {"n2", m.n2}};
    } else {
      agg["mwu"] = nullptr;
    }
  }

  {
    ordered_json eff;
    const auto add_group = [&](const std::string& name, auto&& pred) {
      std::vector<double> budgets, runs;
      for (const SequenceReport& s : report.sequences) {
        if (!s.verdict || s.verdict->budget == 0) continue;
        if (!pred(s)) continue;
        budgets.push_back(static_cast<double>(s.verdict->budget));
        runs.push_back(static_cast<double>(s.verdict->runs_used));
      }
      if (!budgets.empty()) {
        const EfficiencyStats e = efficiency(budgets, runs);
        eff[name] = ordered_json{{"n", budgets.size()},
                                 {"avg_budget", e.avg_budget},
                                 {"avg_runs", e.avg_runs},
                                 {"ratio", e.ratio}};
      }
    };
    add_group("memorized", [](const SequenceReport& s) {
      return s.role == RecordRole::Target && s.verdict->classification == AuditClass::Memorized;
    });
    add_group("control", [](const SequenceReport& s) { return s.role == RecordRole::Control; });
    add_group("audited", [](const SequenceReport&) { return true; });
    agg["efficiency"] = std::move(eff);
  }

  {
    Histogram dist = make_histogram(0.0, 2.0 + histogram_width, histogram_width);
    Histogram sim = make_histogram(-1.0, 1.0 + histogram_width, histogram_width);
    for (const SequenceReport& s : report.sequences) {
      for (double d : s.prefix_pair_distances) dist.add(d);
      for (double v : s.prefix_target_similarities) sim.add(v);
    }
    agg["histograms"] = ordered_json{{"prefix_pairwise_distance", histogram_to_json(dist)},
                                     {"prefix_target_similarity", histogram_to_json(sim)}};
  }

  {
    // Dataset-level sanity across definitions: discoverably-memorized targets
    // should be multi-prefix memorized too, or at least have spent the full
    // budget trying. Reported, never asserted.
    int discoverable_memorized = 0;
    int consistent = 0;
    bool any_baseline = false;
    for (const SequenceReport& s : report.sequences) {
      if (s.role != RecordRole::Target || !s.discoverable || !s.verdict) continue;
      any_baseline = true;
      if (!s.discoverable->memorized) continue;
      ++discoverable_memorized;
      if (s.verdict->classification == AuditClass::Memorized || s.verdict->runs_used == s.verdict->budget) {
        ++consistent;
      }
    }
    if (any_baseline) {
      agg["cross_definition"] = ordered_json{{"discoverable_memorized", discoverable_memorized},
                                             {"also_multi_prefix_or_full_budget", consistent}};
    }
  }

  {
    bool any_segments = false;
    ordered_json partial;
    for (const char* pos : {"first", "middle", "final"}) {
      int wp = 0, wnp = 0, nwp = 0, nwnp = 0;
      for (const SequenceReport& s : report.sequences) {
        if (s.segments.empty() || !s.verdict) continue;
        for (const SegmentAudit& seg : s.segments) {
          if (seg.position != pos) continue;
          any_segments = true;
          const bool whole = s.verdict->classification == AuditClass::Memorized;
          const bool part = seg.verdict.classification == AuditClass::Memorized;
          if (whole && part) ++wp;
          if (whole && !part) ++wnp;
          if (!whole && part) ++nwp;
          if (!whole && !part) ++nwnp;
        }
      }
      partial[pos] = ordered_json{{"wp", wp}, {"w_np", wnp}, {"nw_p", nwp}, {"nw_np", nwnp}};
    }
    agg["partial"] = any_segments ? partial : ordered_json(nullptr);
  }

  return agg;
}

void write_report(const AuditReport& report, const std::string& path, bool with_csv_sidecars) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataFormatError("cannot write " + path);
  out << to_json(report).dump(2) << "\n";
  if (!out) throw DataFormatError("failed while writing " + path);

  if (with_csv_sidecars && report.aggregates.contains("histograms")) {
    const auto write_csv = [&](const std::string& key, const std::string& suffix) {
      if (!report.aggregates["histograms"].contains(key)) return;
      const auto& jh = report.aggregates["histograms"][key];
      const std::string csv_path =
          (path.size() > 5 && path.substr(path.size() - 5) == ".json" ? path.substr(0, path.size() - 5) : path) +
          suffix;
      std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
      if (!csv) throw DataFormatError("cannot write " + csv_path);
      csv << "bin_lo,bin_hi,count\n";
      const double lo = jh.at("lo").get<double>();
      const double width = jh.at("width").get<double>();
      const auto counts = jh.at("counts").get<std::vector<long>>();
      for (std::size_t i = 0; i < counts.size(); ++i) {
        csv << (lo + static_cast<double>(i) * width) << "," << (lo + static_cast<double>(i + 1) * width) << ","
            << counts[i] << "\n";
      }
    };
    write_csv("prefix_pairwise_distance", ".prefix_distance.csv");
    write_csv("prefix_target_similarity", ".target_similarity.csv");
  }
}

AuditReport read_report(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataFormatError("cannot open " + path);
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw DataFormatError(path + ": " + e.what());
  }
  return report_from_json(j);
}

bool verify_report_consistency(const AuditReport& report, std::string* diff) {
  std::string group_a = "memorized";
  std::string group_b = "control";
  double width = 0.065;
  if (report.aggregates.contains("mwu") && report.aggregates["mwu"].is_object()) {
    const auto groups = report.aggregates["mwu"]["groups"].get<std::vector<std::string>>();
    if (groups.size() == 2) {
      group_a = groups[0];
      group_b = groups[1];
    }
  }
  if (report.aggregates.contains("histograms") &&
      report.aggregates["histograms"].contains("prefix_pairwise_distance")) {
    width = report.aggregates["histograms"]["prefix_pairwise_distance"]["width"].get<double>();
  }
  const ordered_json recomputed = compute_aggregates(report, group_a, group_b, width);
  if (recomputed.dump() == report.aggregates.dump()) return true;
  if (diff) {
    *diff = "stored aggregates differ from recompute\nstored:   " + report.aggregates.dump() +
            "\nrecomputed: " + recomputed.dump();
  }
  return false;
}

std::string render_summary(const AuditReport& report) {
  std::ostringstream out;
  int memorized = 0, no_signal = 0, search_failed = 0, controls = 0, control_hits = 0;
  for (const SequenceReport& s : report.sequences) {
    if (!s.verdict) continue;
    if (s.role == RecordRole::Control) {
      ++controls;
      for (const RunOutcome& r : s.verdict->runs) {
        if (r.elicited) ++control_hits;
      }
      continue;
    }
    switch (s.verdict->classification) {
      case AuditClass::Memorized: ++memorized; break;
      case AuditClass::NotMemorizedNoSignal: ++no_signal; break;
      case AuditClass::NotMemorizedSearchFailed: ++search_failed; break;
    }
  }
  out << "sequences: " << report.sequences.size() << "\n";
  out << "targets memorized: " << memorized << ", no-signal: " << no_signal << ", search-failed: " << search_failed
      << "\n";
  if (controls > 0) out << "controls: " << controls << " (eliciting runs: " << control_hits << ")\n";
  if (report.aggregates.contains("mwu") && report.aggregates["mwu"].is_object()) {
    const auto& m = report.aggregates["mwu"];
    out << "mwu " << m["groups"].dump() << ": U=" << m["u"].get<double>() << " p=" << m["p_value"].get<double>()
        << " r=" << m["rank_biserial"].get<double>() << " (" << m["method"].get<std::string>() << ")\n";
  }
  if (report.aggregates.contains("efficiency") && report.aggregates["efficiency"].contains("memorized")) {
    const auto& e = report.aggregates["efficiency"]["memorized"];
    out << "efficiency (memorized): avg_budget=" << e["avg_budget"].get<double>()
        << " avg_runs=" << e["avg_runs"].get<double>() << " ratio=" << e["ratio"].get<double>() << "\n";
  }
  if (report.aggregates.contains("partial") && report.aggregates["partial"].is_object()) {
    for (const char* pos : {"first", "middle", "final"}) {
      const auto& p = report.aggregates["partial"][pos];
      out << "partial " << pos << ": WP=" << p["wp"].get<int>() << " W!P=" << p["w_np"].get<int>()
          << " !WP=" << p["nw_p"].get<int>() << " !W!P=" << p["nw_np"].get<int>() << "\n";
    }
  }
  return out.str();
}

}  // namespace memaudit
