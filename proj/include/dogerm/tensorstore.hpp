#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dogerm/tensor.hpp"

namespace dogerm {

// Checkpoint container layout (bit-exact):
//
//   u64 little-endian  header length H
//   H bytes            UTF-8 JSON: { name: {"dtype":"F32",
//                                           "shape":[...],
//                                           "data_offsets":[begin,end]},
//                                    ...,
//                                    "__metadata__": {str: str}  (optional) }
//   raw data region    little-endian float32, row-major; offsets are
//                      relative to the start of this region
//
// No padding between sections. Tensors are serialized in lexicographic name
// order and the declared offsets must cover the data region exactly with no
// gaps or overlaps, so saving the same map always produces identical bytes.

struct LoadOptions {
  bool allow_nonfinite = false;
};

NamedTensorMap load_checkpoint(const std::filesystem::path& path,
                               const LoadOptions& options = {});

void save_checkpoint(const NamedTensorMap& map, const std::filesystem::path& path);

struct TensorSummary {
  std::string name;
  std::vector<int64_t> shape;
  std::string dtype;  // always "F32"
  int64_t numel = 0;
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;  // accumulated in double precision
};

std::vector<TensorSummary> inspect(const NamedTensorMap& map);

}  // namespace dogerm
