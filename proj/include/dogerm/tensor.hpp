#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dogerm {

// Dense row-major float32 tensor. Rank >= 1; dimensions may be zero
// (zero-size tensors are legal) but never negative.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<float> data;

  static Tensor zeros(std::vector<int64_t> shape);
  static Tensor of(std::vector<int64_t> shape, std::vector<float> data);

  int64_t numel() const;

  // rank-2 accessors
  int64_t rows() const;
  int64_t cols() const;
  float at2(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  // Throws std::invalid_argument when the shape/data invariants do not hold.
  void validate() const;
};

// Bitwise equality (floats compared by bit pattern, so NaN payloads and
// signed zeros are distinguished).
bool bit_equal(const Tensor& a, const Tensor& b);

// Ordered tensor collection; iteration follows lexicographic name order,
// which is also the serialization order. Names are unique, non-empty, and
// may not collide with the container's reserved "__metadata__" key.
class NamedTensorMap {
 public:
  using const_iterator = std::map<std::string, Tensor>::const_iterator;

  NamedTensorMap() = default;

  // Rejects duplicate, empty, and reserved names; validates the tensor.
  void add(const std::string& name, Tensor tensor);

  bool has(const std::string& name) const { return entries_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;

  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  const_iterator begin() const { return entries_.begin(); }
  const_iterator end() const { return entries_.end(); }

  std::vector<std::string> names() const;

  const std::map<std::string, std::string>& metadata() const { return metadata_; }
  void set_metadata(std::string key, std::string value) {
    metadata_[std::move(key)] = std::move(value);
  }
  void set_metadata_map(std::map<std::string, std::string> m) { metadata_ = std::move(m); }

 private:
  std::map<std::string, Tensor> entries_;
  std::map<std::string, std::string> metadata_;
};

// Bitwise equality over every tensor and the metadata map.
bool bit_equal(const NamedTensorMap& a, const NamedTensorMap& b);

}  // namespace dogerm
