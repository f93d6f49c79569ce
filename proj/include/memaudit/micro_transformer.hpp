#pragma once

// Trainable decoder-only micro-transformer: pre-LN blocks, learned positional
// embeddings, byte-level vocabulary by default. Parameters live in one flat
// float32 array addressed through named tensor views; all activation and
// gradient arithmetic runs in double.
//
// A reserved BOS token (id == vocab_size) is prepended internally so that
// position-0 predictions are defined. BOS is never emitted and never counts
// toward sequence length or context limits.

#include <functional>
#include <string>
#include <vector>

#include "memaudit/backend.hpp"
#include "memaudit/corpus.hpp"

namespace memaudit {

struct MicroTransformerConfig {
  int vocab_size = 256;
  int embed_dim = 64;
  int layers = 2;
  int heads = 2;
  int context_len = 64;
  std::uint64_t seed = 0;
  double learning_rate = 1e-3;
  int epochs = 200;

  void validate() const;
};

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<double> m;
  std::vector<double> v;
};

struct TrainingMeta {
  std::string corpus_hash;
  int epochs = 0;
  double final_loss = 0.0;
  std::vector<double> epoch_losses;
};

class MicroTransformer final : public ModelBackend {
public:
  struct TensorInfo {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
    std::size_t count = 0;
  };

  // Fresh model with seeded random initialization (from cfg.seed).
  explicit MicroTransformer(const MicroTransformerConfig& cfg);
  // Model from existing parameters (checkpoint load).
  MicroTransformer(const MicroTransformerConfig& cfg, std::vector<float> params);

  const ModelCapabilities& capabilities() const override { return caps_; }
  std::vector<double> next_token_logprobs(const TokenSeq& context) const override;
  TokenSeq greedy_continue(const TokenSeq& prefix, int n) const override;
  bool greedy_matches(const TokenSeq& prefix, const TokenSeq& target) const override;
  std::vector<std::vector<double>> input_token_gradient(const TokenSeq& prefix, const TokenSeq& target) const override;
  double target_nll(const TokenSeq& prefix, const TokenSeq& target,
                    double abandon_above = std::numeric_limits<double>::infinity()) const override;

  // Relaxed variant for derivative checks: prefix position i contributes the
  // embedding  sum_v mix[i][v] * wte[v]  instead of a hard token lookup.
  double target_nll_mixed(const std::vector<std::vector<double>>& prefix_mix, const TokenSeq& target) const;

  // One Adam step on the mean cross-entropy over all positions of `tokens`
  // (BOS-prepended). Returns the loss evaluated before the update.
  double train_step(const TokenSeq& tokens, AdamState& opt);

  const MicroTransformerConfig& config() const { return cfg_; }
  const std::vector<float>& parameters() const { return params_; }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  Token bos_token() const { return cfg_.vocab_size; }

protected:
  void accumulate_embedding_row(Token t, std::vector<double>& acc) const override;

private:
  void build_layout();
  void init_parameters();
  const float* tensor(std::size_t idx) const { return params_.data() + tensors_[idx].offset; }

  // Incremental (position-at-a-time, KV-cached) forward. Returns the partial
  // NLL over `targets` predicted from position `first_loss_pos` on, giving up
  // once it exceeds abandon_above. When out_last_logprobs is non-null the
  // log-softmax of the final position is written there instead.
  double forward_incremental(const TokenSeq& input_ids, const TokenSeq& targets, int first_loss_pos,
                             double abandon_above, std::vector<double>* out_last_logprobs) const;

  // Full staged forward with caches plus backward. The input embedding for
  // position i is taken from `mixed_rows` when provided (FD relaxation).
  double forward_backward(const TokenSeq& input_ids, const TokenSeq& targets, int first_loss_pos, double loss_scale,
                          std::vector<double>* param_grads, std::vector<double>* input_grads,
                          const std::vector<std::vector<double>>* mixed_rows, int mixed_first_pos) const;

  MicroTransformerConfig cfg_;
  ModelCapabilities caps_;
  std::vector<float> params_;
  std::vector<TensorInfo> tensors_;
};

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

// Deterministic function of (cfg, corpus, train_seed): initializes from
// cfg.seed and visits each record `weight` times per epoch in a seeded
// shuffled order.
MicroTransformer train_micro_transformer(const MicroTransformerConfig& cfg, const Corpus& corpus,
                                         std::uint64_t train_seed, TrainingMeta* meta = nullptr,
                                         const EpochCallback& on_epoch = {});

}  // namespace memaudit
