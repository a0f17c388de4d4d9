#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dogerm/tensor.hpp"
#include "dogerm/vocab.hpp"

namespace dogerm {

// Prompt and response are joined by this token id when scoring; synthetic
// vocabularies reserve id 0 for unknown words and id 1 for the separator.
inline constexpr int32_t kUnknownTokenId = 0;
inline constexpr int32_t kSeparatorTokenId = 1;

struct ToyRMConfig {
  int64_t vocab_size = 0;
  int64_t d_model = 0;
  int64_t n_layers = 0;
  int64_t n_heads = 0;
  int64_t d_ff = 0;
  int64_t max_seq_len = 0;
  uint64_t seed = 0;

  // Throws std::invalid_argument when dimensions are inconsistent.
  void validate() const;
};

ToyRMConfig load_config(const std::filesystem::path& path);

// (prompt, chosen, rejected) token-id triple with a category tag.
struct PreferenceExample {
  std::vector<int32_t> prompt;
  std::vector<int32_t> chosen;
  std::vector<int32_t> rejected;
  std::string category;
};

// prompt ++ [separator] ++ response
std::vector<int32_t> concat_ids(std::span<const int32_t> prompt,
                                std::span<const int32_t> response);

// Whitespace word-level tokenizer; unknown words map to id 0.
std::vector<int32_t> tokenize(const std::string& text, const Vocabulary& vocab);

// Minimal deterministic pre-norm transformer with a scalar regression head.
//
// Parameter names (conforming to the default partition rules, so any ToyRM
// checkpoint is directly mergeable):
//   tok_emb.weight            [vocab_size, d_model]
//   pos_emb.weight            [max_seq_len, d_model]
//   blocks.<i>.ln1.{weight,bias}
//   blocks.<i>.attn.{wq,wk,wv,wo}.{weight,bias}
//   blocks.<i>.ln2.{weight,bias}
//   blocks.<i>.mlp.{fc1,fc2}.{weight,bias}
//   ln_f.{weight,bias}
//   head.{weight,bias}        [1, d_model], [1]
//
// Linear layers store weight as [out, in] with y = W x + b. The reward is
// the regression head applied to the final-layer hidden state at the last
// token position, under causal attention masking. All arithmetic runs in
// double precision over float32 parameters, so scores are bit-reproducible.
class ToyRM {
 public:
  // Seeded initialization: uniform(-0.05, 0.05) weights, zero biases and
  // layer-norm offsets, unit layer-norm scales. The draw order is fixed
  // (tok_emb, pos_emb, blocks in order, head) so a seed pins every bit.
  static ToyRM init(const ToyRMConfig& config);

  // Wraps existing parameters (e.g. a merged checkpoint); validates that
  // names, shapes, and finiteness match the config.
  static ToyRM from_params(const ToyRMConfig& config, NamedTensorMap params);

  const ToyRMConfig& config() const { return config_; }
  const NamedTensorMap& params() const { return params_; }

  double score(std::span<const int32_t> ids) const;

 private:
  ToyRM(ToyRMConfig config, NamedTensorMap params);

  ToyRMConfig config_;
  NamedTensorMap params_;
};

// -log sigmoid(r_chosen - r_rejected), numerically stabilized so large
// negative margins do not overflow.
double pairwise_loss(double reward_chosen, double reward_rejected);

// Mean pairwise loss over the batch plus analytic gradients for every
// parameter tensor, name-aligned with the model's parameter map.
std::pair<double, NamedTensorMap> loss_and_grad(
    const ToyRM& model, const std::vector<PreferenceExample>& batch);

// Deterministic full-batch gradient descent from the seeded initialization.
ToyRM train_toy(const ToyRMConfig& config, const std::vector<PreferenceExample>& dataset,
                int64_t steps, double learning_rate);

}  // namespace dogerm
