#include "dogerm/vocab.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "dogerm/errors.hpp"

namespace dogerm {

using nlohmann::json;

void Vocabulary::validate() const {
  const int64_t n = size();
  std::vector<char> seen(static_cast<size_t>(n), 0);
  for (const auto& [token, id] : token_to_id) {
    if (id < 0 || id >= n) {
      throw VocabError("token \"" + token + "\" has id " + std::to_string(id) +
                       " outside [0, " + std::to_string(n) + ") — id space has a gap");
    }
    if (seen[static_cast<size_t>(id)]) {
      throw VocabError("duplicate id " + std::to_string(id) +
                       " (token \"" + token + "\")");
    }
    seen[static_cast<size_t>(id)] = 1;
  }
}

Vocabulary load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw VocabError(path.string() + ": not valid JSON: " + e.what());
  }
  if (!j.is_object()) {
    throw VocabError(path.string() + ": vocabulary must be a JSON object");
  }
  Vocabulary vocab;
  for (const auto& [token, value] : j.items()) {
    if (!value.is_number_integer()) {
      throw VocabError(path.string() + ": token \"" + token + "\" id is not an integer");
    }
    vocab.token_to_id[token] = value.get<int64_t>();
  }
  vocab.validate();
  return vocab;
}

VocabAlignment align(const Vocabulary& sft, const Vocabulary& rm) {
  VocabAlignment out;

  for (const auto& [token, rm_idx] : rm.token_to_id) {
    out.rm_id[token] = rm_idx;
    out.merged_id[token] = rm_idx;  // RM tokens keep their ids
    if (sft.has(token)) {
      out.shared.push_back(token);
    } else {
      out.unique_rm.push_back(token);
    }
  }

  // Unique-SFT tokens are appended after the RM block, in SFT id order.
  std::vector<std::pair<int64_t, std::string>> sft_only;
  for (const auto& [token, sft_idx] : sft.token_to_id) {
    out.sft_id[token] = sft_idx;
    if (!rm.has(token)) {
      sft_only.emplace_back(sft_idx, token);
    }
  }
  std::sort(sft_only.begin(), sft_only.end());
  int64_t next = rm.size();
  for (const auto& [_, token] : sft_only) {
    out.unique_sft.push_back(token);
    out.merged_id[token] = next++;
  }
  std::sort(out.unique_sft.begin(), out.unique_sft.end());

  out.merged_size = next;
  return out;
}

std::string alignment_to_json(const VocabAlignment& alignment) {
  json j;
  j["shared"] = alignment.shared;
  j["unique_sft"] = alignment.unique_sft;
  j["unique_rm"] = alignment.unique_rm;
  j["merged_id"] = alignment.merged_id;
  return j.dump(2) + "\n";
}

}  // namespace dogerm
