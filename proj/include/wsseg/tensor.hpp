#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "wsseg/errors.hpp"

namespace wsseg {

// Dense float tensor, NCHW layout for 4-d data. Value semantics throughout;
// the training engine never shares storage between tensors.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(numel_of(shape_), 0.0f);
  }
  Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

  static Tensor full(std::vector<int> shape, float v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim() const { return static_cast<int>(shape_.size()); }
  int size(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // NCHW accessor; only valid for 4-d tensors.
  float& at(int n, int c, int h, int w) {
    return data_[idx4(n, c, h, w)];
  }
  float at(int n, int c, int h, int w) const {
    return data_[idx4(n, c, h, w)];
  }
  // 2-d accessor (rows, cols).
  float& at(int r, int c) { return data_[static_cast<size_t>(r) * shape_[1] + c]; }
  float at(int r, int c) const { return data_[static_cast<size_t>(r) * shape_[1] + c]; }

  void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  static int64_t numel_of(const std::vector<int>& shape) {
    int64_t n = shape.empty() ? 0 : 1;
    for (int s : shape) n *= s;
    return n;
  }

 private:
  size_t idx4(int n, int c, int h, int w) const {
    return ((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  std::vector<int> shape_;
  std::vector<float> data_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": shape mismatch");
}

}  // namespace wsseg
