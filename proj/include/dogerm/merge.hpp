#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dogerm/tensor.hpp"
#include "dogerm/vocab.hpp"

namespace dogerm {

// Name-pattern rules classifying tensors into embedding / head parts;
// anything matching neither falls to the transformer part. `*` matches any
// (possibly empty) run of characters. The head patterns are matched against
// both the SFT decoding layer and the RM regression layer.
struct PartitionRules {
  std::vector<std::string> embedding_patterns;
  std::vector<std::string> head_patterns;

  // Rules for the toy architecture shipped with this repo.
  static PartitionRules toy_defaults();
};

// Loads {"embedding_patterns":[...], "head_patterns":[...]} from JSON.
PartitionRules load_rules(const std::filesystem::path& path);

bool glob_match(const std::string& pattern, const std::string& name);

enum class TensorClass { Embedding, Transformer, Head };

// Throws AmbiguousRuleError when a name matches both an embedding and a
// head pattern.
TensorClass classify(const PartitionRules& rules, const std::string& name);

struct PartitionedParams {
  NamedTensorMap emb;
  NamedTensorMap trans;
  NamedTensorMap head;
};

PartitionedParams partition(const NamedTensorMap& map, const PartitionRules& rules);

// lambda is the weight on SFT parameters; 0 recovers the RM side, 1 the SFT
// side, and both endpoints short-circuit to exact bit copies.
struct MergeSpec {
  double lambda = 0.35;
  PartitionRules rules;
  std::optional<VocabAlignment> alignment;  // required when vocabularies differ
};

// Elementwise weighted average lambda*sft + (1-lambda)*rm over identically
// named and shaped sub-maps. Accumulates in double, stores float32.
NamedTensorMap merge_transformer(const NamedTensorMap& sft, const NamedTensorMap& rm,
                                 double lambda, int threads = 1);

// Row-wise embedding merge: shared tokens averaged, unique tokens bit-copied
// from their source, rows placed per alignment.merged_id. Output has
// alignment.merged_size rows.
Tensor merge_embeddings(const Tensor& sft_emb, const Tensor& rm_emb,
                        const VocabAlignment& alignment, double lambda);

// Disjoint union of the three parts; head tensors are the RM regression
// layer, bit-copied. The SFT decoding layer never reaches this call.
NamedTensorMap assemble(const NamedTensorMap& emb, const NamedTensorMap& trans,
                        const NamedTensorMap& rm_head,
                        const std::map<std::string, std::string>& metadata = {});

// End-to-end merge: partition -> merge embeddings -> merge transformer ->
// assemble with the RM head. Output metadata is the RM checkpoint's metadata.
NamedTensorMap merge(const NamedTensorMap& sft, const NamedTensorMap& rm,
                     const MergeSpec& spec, int threads = 1);

}  // namespace dogerm
