#include "dogerm/merge.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <functional>
#include <thread>

#include <json.hpp>

#include "dogerm/errors.hpp"

namespace dogerm {

using nlohmann::json;

PartitionRules PartitionRules::toy_defaults() {
  PartitionRules rules;
  rules.embedding_patterns = {"tok_emb.*"};
  rules.head_patterns = {"head.*"};
  return rules;
}

PartitionRules load_rules(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": not valid JSON: " + e.what());
  }
  PartitionRules rules;
  try {
    if (j.contains("embedding_patterns")) {
      rules.embedding_patterns = j["embedding_patterns"].get<std::vector<std::string>>();
    }
    if (j.contains("head_patterns")) {
      rules.head_patterns = j["head_patterns"].get<std::vector<std::string>>();
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return rules;
}

bool glob_match(const std::string& pattern, const std::string& name) {
  // Iterative `*` matcher; star matches any possibly-empty run.
  size_t p = 0, n = 0;
  size_t star = std::string::npos, backtrack = 0;
  while (n < name.size()) {
    if (p < pattern.size() && (pattern[p] == name[n])) {
      ++p;
      ++n;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      backtrack = n;
    } else if (star != std::string::npos) {
      p = star + 1;
      n = ++backtrack;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

namespace {

bool matches_any(const std::vector<std::string>& patterns, const std::string& name) {
  return std::any_of(patterns.begin(), patterns.end(),
                     [&](const std::string& p) { return glob_match(p, name); });
}

// Weighted average of one tensor pair, double accumulation. Endpoints are
// exact copies: floating-point lambda*a + (1-lambda)*a need not equal a.
Tensor average_tensor(const Tensor& sft, const Tensor& rm, double lambda) {
  if (lambda == 0.0) return rm;
  if (lambda == 1.0) return sft;
  Tensor out;
  out.shape = rm.shape;
  out.data.resize(rm.data.size());
  const double l = lambda;
  const double r = 1.0 - lambda;
  for (size_t i = 0; i < rm.data.size(); ++i) {
    out.data[i] = static_cast<float>(l * static_cast<double>(sft.data[i]) +
                                     r * static_cast<double>(rm.data[i]));
  }
  return out;
}

void run_parallel(size_t jobs, int threads, const std::function<void(size_t)>& fn) {
  if (threads <= 1 || jobs <= 1) {
    for (size_t i = 0; i < jobs; ++i) fn(i);
    return;
  }
  const size_t workers = std::min<size_t>(static_cast<size_t>(threads), jobs);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (size_t i = w; i < jobs; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

TensorClass classify(const PartitionRules& rules, const std::string& name) {
  const bool is_emb = matches_any(rules.embedding_patterns, name);
  const bool is_head = matches_any(rules.head_patterns, name);
  if (is_emb && is_head) {
    throw AmbiguousRuleError("tensor \"" + name +
                             "\" matches both embedding and head patterns");
  }
  if (is_emb) return TensorClass::Embedding;
  if (is_head) return TensorClass::Head;
  return TensorClass::Transformer;
}

PartitionedParams partition(const NamedTensorMap& map, const PartitionRules& rules) {
  PartitionedParams parts;
  for (const auto& [name, tensor] : map) {
    switch (classify(rules, name)) {
      case TensorClass::Embedding: parts.emb.add(name, tensor); break;
      case TensorClass::Head: parts.head.add(name, tensor); break;
      case TensorClass::Transformer: parts.trans.add(name, tensor); break;
    }
  }
  return parts;
}

NamedTensorMap merge_transformer(const NamedTensorMap& sft, const NamedTensorMap& rm,
                                 double lambda, int threads) {
  if (sft.names() != rm.names()) {
    throw ShapeMismatchError("transformer parts have different tensor name sets");
  }
  std::vector<std::string> names = rm.names();
  std::vector<Tensor> merged(names.size());
  for (const auto& name : names) {
    if (!sft.at(name).same_shape(rm.at(name))) {
      throw ShapeMismatchError("tensor \"" + name + "\": shape mismatch");
    }
  }
  run_parallel(names.size(), threads, [&](size_t i) {
    merged[i] = average_tensor(sft.at(names[i]), rm.at(names[i]), lambda);
  });
  NamedTensorMap out;
  for (size_t i = 0; i < names.size(); ++i) {
    out.add(names[i], std::move(merged[i]));
  }
  return out;
}

Tensor merge_embeddings(const Tensor& sft_emb, const Tensor& rm_emb,
                        const VocabAlignment& alignment, double lambda) {
  if (sft_emb.shape.size() != 2 || rm_emb.shape.size() != 2) {
    throw ShapeMismatchError("embedding tensors must be rank-2");
  }
  if (sft_emb.cols() != rm_emb.cols()) {
    throw ShapeMismatchError("embedding width mismatch: " +
                             std::to_string(sft_emb.cols()) + " vs " +
                             std::to_string(rm_emb.cols()));
  }
  if (sft_emb.rows() != static_cast<int64_t>(alignment.sft_id.size())) {
    throw AlignmentError("SFT embedding has " + std::to_string(sft_emb.rows()) +
                         " rows but the alignment was built from " +
                         std::to_string(alignment.sft_id.size()) + " tokens");
  }
  if (rm_emb.rows() != static_cast<int64_t>(alignment.rm_id.size())) {
    throw AlignmentError("RM embedding has " + std::to_string(rm_emb.rows()) +
                         " rows but the alignment was built from " +
                         std::to_string(alignment.rm_id.size()) + " tokens");
  }

  const int64_t width = rm_emb.cols();
  Tensor out = Tensor::zeros({alignment.merged_size, width});

  auto copy_row = [width](Tensor& dst, int64_t dst_row, const Tensor& src, int64_t src_row) {
    std::memcpy(dst.data.data() + dst_row * width, src.data.data() + src_row * width,
                static_cast<size_t>(width) * sizeof(float));
  };

  for (const std::string& token : alignment.shared) {
    const int64_t dst = alignment.merged_id.at(token);
    const int64_t s = alignment.sft_id.at(token);
    const int64_t r = alignment.rm_id.at(token);
    if (lambda == 0.0) {
      copy_row(out, dst, rm_emb, r);
    } else if (lambda == 1.0) {
      copy_row(out, dst, sft_emb, s);
    } else {
      for (int64_t c = 0; c < width; ++c) {
        out.data[static_cast<size_t>(dst * width + c)] = static_cast<float>(
            lambda * static_cast<double>(sft_emb.at2(s, c)) +
            (1.0 - lambda) * static_cast<double>(rm_emb.at2(r, c)));
      }
    }
  }
  for (const std::string& token : alignment.unique_sft) {
    copy_row(out, alignment.merged_id.at(token), sft_emb, alignment.sft_id.at(token));
  }
  for (const std::string& token : alignment.unique_rm) {
    copy_row(out, alignment.merged_id.at(token), rm_emb, alignment.rm_id.at(token));
  }
  return out;
}

NamedTensorMap assemble(const NamedTensorMap& emb, const NamedTensorMap& trans,
                        const NamedTensorMap& rm_head,
                        const std::map<std::string, std::string>& metadata) {
  NamedTensorMap out;
  out.set_metadata_map(metadata);
  auto add_part = [&out](const NamedTensorMap& part, const char* label) {
    for (const auto& [name, tensor] : part) {
      if (out.has(name)) {
        throw AssemblyError("tensor \"" + name + "\" from the " + label +
                            " part collides with another part");
      }
      out.add(name, tensor);
    }
  };
  add_part(emb, "embedding");
  add_part(trans, "transformer");
  add_part(rm_head, "head");
  return out;
}

NamedTensorMap merge(const NamedTensorMap& sft, const NamedTensorMap& rm,
                     const MergeSpec& spec, int threads) {
  if (spec.lambda < 0.0 || spec.lambda > 1.0) {
    throw RangeError("lambda must lie in [0, 1], got " + std::to_string(spec.lambda));
  }
  PartitionedParams s = partition(sft, spec.rules);
  PartitionedParams r = partition(rm, spec.rules);

  NamedTensorMap merged_emb;
  if (spec.alignment.has_value()) {
    if (s.emb.names() != r.emb.names()) {
      throw ShapeMismatchError("embedding parts have different tensor name sets");
    }
    for (const auto& [name, rm_tensor] : r.emb) {
      merged_emb.add(name,
                     merge_embeddings(s.emb.at(name), rm_tensor, *spec.alignment,
                                      spec.lambda));
    }
  } else {
    // Identical vocabularies: every row is shared, so the embedding part
    // averages exactly like the transformer part.
    merged_emb = merge_transformer(s.emb, r.emb, spec.lambda, threads);
  }

  NamedTensorMap merged_trans = merge_transformer(s.trans, r.trans, spec.lambda, threads);

  // The SFT decoding layer (s.head) is discarded; the RM regression layer
  // passes through bit-exact.
  return assemble(merged_emb, merged_trans, r.head, rm.metadata());
}

}  // namespace dogerm
