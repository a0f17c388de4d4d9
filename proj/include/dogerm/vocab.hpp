#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dogerm {

// Token -> row-index map. Ids are exactly {0, ..., size-1}.
struct Vocabulary {
  std::map<std::string, int64_t> token_to_id;

  int64_t size() const { return static_cast<int64_t>(token_to_id.size()); }
  bool has(const std::string& token) const { return token_to_id.count(token) != 0; }
  int64_t id(const std::string& token) const { return token_to_id.at(token); }

  // Throws VocabError on gaps or duplicates in the id space.
  void validate() const;
};

// Loads a UTF-8 JSON object {token: id}.
Vocabulary load_vocab(const std::filesystem::path& path);

// Partition of two vocabularies into shared / unique token sets, plus the
// merged row assignment. Token identity is exact string equality.
//
// Merged ordering: tokens present in the RM vocabulary keep their RM ids in
// [0, |rm|); tokens unique to the SFT vocabulary are appended after, ordered
// by their SFT id. The merged model keeps the RM head and is used as a
// reward model, so any RM-side tokenizer stays valid unchanged.
struct VocabAlignment {
  std::vector<std::string> shared;      // sorted lexicographically
  std::vector<std::string> unique_sft;  // sorted lexicographically
  std::vector<std::string> unique_rm;   // sorted lexicographically
  std::map<std::string, int64_t> merged_id;
  int64_t merged_size = 0;

  // Source row indices, needed to locate embedding rows during merging.
  std::map<std::string, int64_t> sft_id;  // tokens present in the SFT vocab
  std::map<std::string, int64_t> rm_id;   // tokens present in the RM vocab
};

VocabAlignment align(const Vocabulary& sft, const Vocabulary& rm);

// JSON export: {"shared":[...], "unique_sft":[...], "unique_rm":[...],
//               "merged_id":{token: index}}
std::string alignment_to_json(const VocabAlignment& alignment);

}  // namespace dogerm
