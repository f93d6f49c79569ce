// memaudit CLI: train the micro model, audit sequences for multi-prefix
// memorization, probe random-token controls, run baseline definitions,
// audit overlapping half segments, and aggregate statistics.
//
// Exit codes: 0 success, 1 usage error, 2 data/model error.

#include <chrono>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "memaudit/checkpoint.hpp"
#include "memaudit/pipeline.hpp"
#include "memaudit/rng.hpp"

namespace {

using namespace memaudit;

struct SharedFlags {
  std::uint64_t seed = 0;
  double distinct_threshold = 0.3;
  int gcg_steps = 250;
  int gcg_topk = 64;
  int gcg_batch = 128;
  int prefix_len = 8;
  int fail_streak = 0;
  double eta_min = 0.0;
  double tau = 1.0;
  int threads = 1;
  std::string wrap_prefix;
  std::string wrap_suffix;
  std::string algo = "auto";
  std::string init = "random";
};

void add_shared_flags(CLI::App* cmd, SharedFlags& f) {
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--distinct-threshold", f.distinct_threshold, "min pairwise cosine distance between prefixes");
  cmd->add_option("--gcg-steps", f.gcg_steps, "optimization steps per search run");
  cmd->add_option("--gcg-topk", f.gcg_topk, "gradient candidates kept per position");
  cmd->add_option("--gcg-batch", f.gcg_batch, "sampled substitutions per step");
  cmd->add_option("--prefix-len", f.prefix_len, "searched prefix length in tokens");
  cmd->add_option("--fail-streak", f.fail_streak, "abort after N consecutive failed runs (0 = off)");
  cmd->add_option("--eta-min", f.eta_min, "minimum internal signal for the memorization condition");
  cmd->add_option("--tau", f.tau, "ACR memorization threshold");
  cmd->add_option("--threads", f.threads, "worker threads across sequences/runs");
  cmd->add_option("--wrap-prefix", f.wrap_prefix, "template bytes placed before the searched prefix");
  cmd->add_option("--wrap-suffix", f.wrap_suffix, "template bytes placed after the searched prefix");
  cmd->add_option("--algo", f.algo, "search algorithm: auto|gcg|random")
      ->check(CLI::IsMember({"auto", "gcg", "random"}));
  cmd->add_option("--init", f.init, "prefix initialization: random|constant")
      ->check(CLI::IsMember({"random", "constant"}));
}

SearchAlgo parse_algo(const std::string& s) {
  if (s == "gcg") return SearchAlgo::Gcg;
  if (s == "random") return SearchAlgo::RandomSubstitution;
  return SearchAlgo::Auto;
}

AuditConfig make_audit_config(const SharedFlags& f) {
  AuditConfig cfg;
  cfg.gcg.prefix_len = f.prefix_len;
  cfg.gcg.steps = f.gcg_steps;
  cfg.gcg.top_k = f.gcg_topk;
  cfg.gcg.batch = f.gcg_batch;
  cfg.gcg.init = f.init == "constant" ? PrefixInit::ConstantToken : PrefixInit::SeededRandom;
  cfg.gcg.wrap_prefix = tokenize_bytes(f.wrap_prefix);
  cfg.gcg.wrap_suffix = tokenize_bytes(f.wrap_suffix);
  cfg.algo = parse_algo(f.algo);
  cfg.distinct_threshold = f.distinct_threshold;
  cfg.eta_min = f.eta_min;
  cfg.fail_streak = f.fail_streak;
  cfg.master_seed = f.seed;
  return cfg;
}

nlohmann::ordered_json config_snapshot(const SharedFlags& f, const std::string& model_path,
                                       const MicroTransformerConfig* model_cfg) {
  nlohmann::ordered_json j;
  j["seed"] = f.seed;
  j["distinct_threshold"] = f.distinct_threshold;
  j["gcg"] = {{"steps", f.gcg_steps}, {"top_k", f.gcg_topk}, {"batch", f.gcg_batch},
              {"prefix_len", f.prefix_len}, {"init", f.init}};
  j["fail_streak"] = f.fail_streak;
  j["eta_min"] = f.eta_min;
  j["tau"] = f.tau;
  j["algo"] = f.algo;
  j["wrap_prefix"] = f.wrap_prefix;
  j["wrap_suffix"] = f.wrap_suffix;
  if (!model_path.empty()) {
    j["checkpoint"] = model_path;
    j["checkpoint_hash"] = checkpoint_file_hash(model_path);
  }
  if (model_cfg) {
    j["model"] = {{"vocab_size", model_cfg->vocab_size}, {"embed_dim", model_cfg->embed_dim},
                  {"layers", model_cfg->layers},         {"heads", model_cfg->heads},
                  {"context_len", model_cfg->context_len}, {"seed", model_cfg->seed}};
  }
  return j;
}

void check_vocab(const Corpus& data, const MicroTransformer& model) {
  if (data.vocab_size != model.capabilities().vocab_size) {
    throw DataFormatError("data vocabulary of size " + std::to_string(data.vocab_size) +
                          " does not match model vocabulary of size " +
                          std::to_string(model.capabilities().vocab_size));
  }
}

int run(int argc, char** argv) {
  CLI::App app{"multi-prefix memorization auditor"};
  app.require_subcommand(1);

  // --- train ---
  auto* train_cmd = app.add_subcommand("train", "train the micro-transformer on a JSONL corpus");
  std::string train_data, train_out;
  MicroTransformerConfig mt_cfg;
  std::uint64_t train_seed = 0;
  bool quiet = false;
  train_cmd->add_option("--data", train_data, "training corpus (JSONL)")->required();
  train_cmd->add_option("--out", train_out, "checkpoint output path (.mtckpt)")->required();
  train_cmd->add_option("--seed", train_seed, "init + schedule seed");
  train_cmd->add_option("--epochs", mt_cfg.epochs, "training epochs");
  train_cmd->add_option("--lr", mt_cfg.learning_rate, "Adam learning rate");
  train_cmd->add_option("--layers", mt_cfg.layers, "transformer layers");
  train_cmd->add_option("--heads", mt_cfg.heads, "attention heads");
  train_cmd->add_option("--dim", mt_cfg.embed_dim, "embedding dimension");
  train_cmd->add_option("--context", mt_cfg.context_len, "context length in tokens");
  train_cmd->add_option("--vocab", mt_cfg.vocab_size, "vocabulary size");
  train_cmd->add_flag("--quiet", quiet, "suppress per-epoch loss lines");

  // --- audit ---
  auto* audit_cmd = app.add_subcommand("audit", "run the multi-prefix audit over target sequences");
  std::string audit_model, audit_data, audit_out;
  SharedFlags audit_flags;
  int audit_controls = 0;
  int control_len_min = 5, control_len_max = 15;
  int data_vocab = 256;
  bool with_baselines = false, with_segments = false;
  std::string screen_corpus_path;
  audit_cmd->add_option("--model", audit_model, "checkpoint path")->required();
  audit_cmd->add_option("--data", audit_data, "target sequences (JSONL)")->required();
  audit_cmd->add_option("--out", audit_out, "report output path (JSON)")->required();
  audit_cmd->add_option("--vocab", data_vocab, "vocabulary the data is encoded in (byte-level default)");
  audit_cmd->add_option("--controls", audit_controls, "also probe N random-token controls");
  audit_cmd->add_option("--control-len-min", control_len_min, "control length range lower bound");
  audit_cmd->add_option("--control-len-max", control_len_max, "control length range upper bound");
  audit_cmd->add_option("--train-data", screen_corpus_path, "training corpus to screen controls against");
  audit_cmd->add_flag("--with-baselines", with_baselines, "also run discoverable + ACR baselines");
  audit_cmd->add_flag("--segments", with_segments, "also audit first/middle/final halves");
  add_shared_flags(audit_cmd, audit_flags);

  // --- baseline ---
  auto* baseline_cmd = app.add_subcommand("baseline", "run discoverable + ACR definitions only");
  std::string base_model, base_data, base_out, split_policy = "any";
  SharedFlags base_flags;
  int acr_attempts = 3, acr_max_len = 0;
  baseline_cmd->add_option("--model", base_model)->required();
  baseline_cmd->add_option("--data", base_data)->required();
  baseline_cmd->add_option("--out", base_out)->required();
  baseline_cmd->add_option("--split-policy", split_policy, "discoverable split policy: any|half")
      ->check(CLI::IsMember({"any", "half"}));
  baseline_cmd->add_option("--acr-attempts", acr_attempts, "seeded attempts per prompt length");
  baseline_cmd->add_option("--acr-max-len", acr_max_len, "prompt length cap (0 = target length)");
  add_shared_flags(baseline_cmd, base_flags);

  // --- controls ---
  auto* controls_cmd = app.add_subcommand("controls", "probe random-token control sequences");
  std::string ctl_model, ctl_out, ctl_save, ctl_screen;
  SharedFlags ctl_flags;
  int ctl_count = 1000, ctl_len_min = 5, ctl_len_max = 15;
  controls_cmd->add_option("--model", ctl_model)->required();
  controls_cmd->add_option("--out", ctl_out)->required();
  controls_cmd->add_option("--count", ctl_count, "number of control sequences");
  controls_cmd->add_option("--len-min", ctl_len_min);
  controls_cmd->add_option("--len-max", ctl_len_max);
  controls_cmd->add_option("--save-controls", ctl_save, "also write the generated controls as JSONL");
  controls_cmd->add_option("--train-data", ctl_screen, "training corpus to screen controls against");
  add_shared_flags(controls_cmd, ctl_flags);

  // --- partial ---
  auto* partial_cmd = app.add_subcommand("partial", "audit whole sequences plus overlapping halves");
  std::string part_model, part_data, part_out;
  SharedFlags part_flags;
  partial_cmd->add_option("--model", part_model)->required();
  partial_cmd->add_option("--data", part_data)->required();
  partial_cmd->add_option("--out", part_out)->required();
  add_shared_flags(partial_cmd, part_flags);

  // --- stats ---
  auto* stats_cmd = app.add_subcommand("stats", "recompute aggregate statistics for a report");
  std::vector<std::string> stats_reports;
  std::string stats_groups = "memorized,control", stats_out;
  double hist_width = 0.065;
  stats_cmd->add_option("--report", stats_reports, "report JSON path(s); several merge")->required();
  stats_cmd->add_option("--groups", stats_groups, "two comma-separated rate groups for the U test");
  stats_cmd->add_option("--out", stats_out, "write the re-aggregated report here");
  stats_cmd->add_option("--hist-width", hist_width, "histogram bin width");

  // --- report ---
  auto* report_cmd = app.add_subcommand("report", "verify and summarize a report");
  std::string rep_in, rep_out;
  bool rep_verify = false;
  report_cmd->add_option("--report", rep_in)->required();
  report_cmd->add_option("--out", rep_out, "write the summary here instead of stdout");
  report_cmd->add_flag("--verify", rep_verify, "fail unless stored aggregates match a recompute");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      app.exit(e);
      return 0;
    }
    std::cerr << e.what() << "\n";
    std::cerr << app.help() << "\n";
    return 1;
  }

  const auto t0 = std::chrono::steady_clock::now();
  const auto elapsed = [&t0]() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  try {
    if (*train_cmd) {
      const Corpus corpus = load_jsonl(train_data, mt_cfg.vocab_size);
      mt_cfg.seed = train_seed;
      TrainingMeta meta;
      const MicroTransformer model = train_micro_transformer(
          mt_cfg, corpus, train_seed, &meta, [&](int epoch, double loss) {
            if (!quiet) std::cerr << "epoch " << epoch << " mean_loss " << loss << "\n";
          });
      save_checkpoint(model, meta, train_out);
      std::cerr << "trained " << corpus.size() << " records for " << mt_cfg.epochs << " epochs in " << elapsed()
                << "s, final loss " << meta.final_loss << "\n";
      return 0;
    }

    if (*audit_cmd || *partial_cmd || *baseline_cmd) {
      const bool is_partial = static_cast<bool>(*partial_cmd);
      const bool is_baseline = static_cast<bool>(*baseline_cmd);
      const SharedFlags& flags = is_partial ? part_flags : (is_baseline ? base_flags : audit_flags);
      const std::string& model_path = is_partial ? part_model : (is_baseline ? base_model : audit_model);
      const std::string& data_path = is_partial ? part_data : (is_baseline ? base_data : audit_data);
      const std::string& out_path = is_partial ? part_out : (is_baseline ? base_out : audit_out);

      LoadedModel loaded = load_checkpoint(model_path);
      Corpus data = load_jsonl(data_path, *audit_cmd ? data_vocab : loaded.model.capabilities().vocab_size);
      check_vocab(data, loaded.model);

      if (*audit_cmd && audit_controls > 0) {
        std::vector<Record> controls =
            gen_random_controls(loaded.model.capabilities().vocab_size, audit_controls, control_len_min,
                                control_len_max, audit_flags.seed);
        if (!screen_corpus_path.empty()) {
          const Corpus train_corpus = load_jsonl(screen_corpus_path, data.vocab_size);
          std::vector<Record> kept;
          for (Record& rec : controls) {
            if (appears_in_corpus(train_corpus, rec.tokens)) {
              std::cerr << "dropping control " << rec.id << ": appears verbatim in the training corpus\n";
            } else {
              kept.push_back(std::move(rec));
            }
          }
          controls = std::move(kept);
        }
        for (Record& rec : controls) data.records.push_back(std::move(rec));
      }

      PipelineOptions opts;
      opts.audit = make_audit_config(flags);
      opts.with_baselines = is_baseline || with_baselines;
      opts.with_segments = is_partial || with_segments;
      opts.acr.tau = flags.tau;
      opts.acr.attempts_per_length = acr_attempts;
      opts.acr.max_prompt_len = acr_max_len;
      opts.acr.search = opts.audit.gcg;
      opts.acr.algo = opts.audit.algo;
      opts.acr.master_seed = flags.seed;
      opts.discoverable_policy = split_policy == "half" ? SplitPolicy::Half : SplitPolicy::Any;
      opts.threads = flags.threads;
      opts.log = [](const std::string& line) { std::cerr << line << "\n"; };

      AuditReport report = run_audit_pipeline(loaded.model, data, opts);
      report.config = config_snapshot(flags, model_path, &loaded.model.config());
      report.config["command"] = is_partial ? "partial" : (is_baseline ? "baseline" : "audit");
      report.config["data"] = data_path;
      write_report(report, out_path);
      std::cerr << render_summary(report);
      std::cerr << "completed in " << elapsed() << "s\n";
      return 0;
    }

    if (*controls_cmd) {
      LoadedModel loaded = load_checkpoint(ctl_model);
      std::vector<Record> controls = gen_random_controls(loaded.model.capabilities().vocab_size, ctl_count,
                                                         ctl_len_min, ctl_len_max, ctl_flags.seed);
      if (!ctl_screen.empty()) {
        const Corpus train_corpus = load_jsonl(ctl_screen, loaded.model.capabilities().vocab_size);
        std::vector<Record> kept;
        for (Record& rec : controls) {
          if (appears_in_corpus(train_corpus, rec.tokens)) {
            std::cerr << "dropping control " << rec.id << ": appears verbatim in the training corpus\n";
          } else {
            kept.push_back(std::move(rec));
          }
        }
        controls = std::move(kept);
      }
      Corpus data;
      data.vocab_size = loaded.model.capabilities().vocab_size;
      data.records = controls;
      if (!ctl_save.empty()) save_jsonl(data, ctl_save);

      PipelineOptions opts;
      opts.audit = make_audit_config(ctl_flags);
      opts.threads = ctl_flags.threads;
      opts.log = [](const std::string& line) { std::cerr << line << "\n"; };
      AuditReport report = run_audit_pipeline(loaded.model, data, opts);
      report.config = config_snapshot(ctl_flags, ctl_model, &loaded.model.config());
      report.config["command"] = "controls";
      report.config["count"] = ctl_count;
      write_report(report, ctl_out);
      std::cerr << render_summary(report);
      std::cerr << "completed in " << elapsed() << "s\n";
      return 0;
    }

    if (*stats_cmd) {
      AuditReport merged;
      bool first = true;
      for (const std::string& path : stats_reports) {
        AuditReport r = read_report(path);
        if (first) {
          merged = std::move(r);
          first = false;
        } else {
          for (SequenceReport& s : r.sequences) merged.sequences.push_back(std::move(s));
        }
      }
      const auto comma = stats_groups.find(',');
      if (comma == std::string::npos) throw DataFormatError("--groups expects two comma-separated names");
      const std::string group_a = stats_groups.substr(0, comma);
      const std::string group_b = stats_groups.substr(comma + 1);
      merged.aggregates = compute_aggregates(merged, group_a, group_b, hist_width);
      std::cout << merged.aggregates.dump(2) << "\n";
      if (!stats_out.empty()) write_report(merged, stats_out);
      return 0;
    }

    if (*report_cmd) {
      const AuditReport report = read_report(rep_in);
      std::string diff;
      const bool consistent = verify_report_consistency(report, &diff);
      const std::string summary = render_summary(report);
      if (rep_out.empty()) {
        std::cout << summary;
      } else {
        std::ofstream out(rep_out, std::ios::binary | std::ios::trunc);
        if (!out) throw DataFormatError("cannot write " + rep_out);
        out << summary;
      }
      if (rep_verify && !consistent) {
        std::cerr << "report aggregates are inconsistent:\n" << diff << "\n";
        return 2;
      }
      std::cout << "aggregates " << (consistent ? "verified" : "NOT verified") << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
