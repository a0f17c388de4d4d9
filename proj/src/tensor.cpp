#include "dogerm/tensor.hpp"

#include <bit>
#include <cstring>
#include <stdexcept>

namespace dogerm {

namespace {

int64_t checked_numel(const std::vector<int64_t>& shape) {
  if (shape.empty()) {
    throw std::invalid_argument("tensor rank must be >= 1");
  }
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) {
      throw std::invalid_argument("tensor dimension must be non-negative");
    }
    if (d != 0 && n > (int64_t{1} << 60) / d) {
      throw std::invalid_argument("tensor size overflow");
    }
    n *= d;
  }
  return n;
}

}  // namespace

Tensor Tensor::zeros(std::vector<int64_t> shape) {
  int64_t n = checked_numel(shape);
  Tensor t;
  t.shape = std::move(shape);
  t.data.assign(static_cast<size_t>(n), 0.0f);
  return t;
}

Tensor Tensor::of(std::vector<int64_t> shape, std::vector<float> data) {
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::move(data);
  t.validate();
  return t;
}

int64_t Tensor::numel() const {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

int64_t Tensor::rows() const {
  if (shape.size() != 2) throw std::invalid_argument("rows(): tensor is not rank-2");
  return shape[0];
}

int64_t Tensor::cols() const {
  if (shape.size() != 2) throw std::invalid_argument("cols(): tensor is not rank-2");
  return shape[1];
}

void Tensor::validate() const {
  int64_t n = checked_numel(shape);
  if (static_cast<int64_t>(data.size()) != n) {
    throw std::invalid_argument("tensor data length does not match shape");
  }
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) return false;
  if (a.data.size() != b.data.size()) return false;
  return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

void NamedTensorMap::add(const std::string& name, Tensor tensor) {
  if (name.empty()) {
    throw std::invalid_argument("tensor name must be non-empty");
  }
  if (name == "__metadata__") {
    throw std::invalid_argument("tensor name \"__metadata__\" is reserved");
  }
  if (entries_.count(name) != 0) {
    throw std::invalid_argument("duplicate tensor name: " + name);
  }
  tensor.validate();
  entries_.emplace(name, std::move(tensor));
}

const Tensor& NamedTensorMap::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw std::out_of_range("no tensor named \"" + name + "\"");
  }
  return it->second;
}

std::vector<std::string> NamedTensorMap::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

bool bit_equal(const NamedTensorMap& a, const NamedTensorMap& b) {
  if (a.size() != b.size()) return false;
  if (a.metadata() != b.metadata()) return false;
  auto ia = a.begin();
  auto ib = b.begin();
  for (; ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first) return false;
    if (!bit_equal(ia->second, ib->second)) return false;
  }
  return true;
}

}  // namespace dogerm
