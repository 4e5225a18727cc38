// Copyright 2026 the ppaudit authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef PPAUDIT_TENSOR_HPP_
#define PPAUDIT_TENSOR_HPP_

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "ppaudit/memory.hpp"

namespace ppaudit {

/// Dense float32 tensor, row-major. Activations use NHWC layout throughout;
/// 3x3 conv weights are stored [ky, kx, c_in, c_out] so the flattened matrix
/// is GEMM-ready without repacking.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape) { resize(std::move(shape)); }

  void resize(std::vector<int64_t> shape) {
    shape_ = std::move(shape);
    int64_t n = 1;
    for (int64_t d : shape_) n *= d;
    data_.assign(static_cast<std::size_t>(n), 0.0f);
  }

  /// Reshape without clearing when the shape already matches. Contents are
  /// unspecified after a real resize; callers overwrite.
  void ensure(const std::vector<int64_t>& shape) {
    if (shape_ != shape) resize(shape);
  }

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  float& operator[](int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  void fill(float v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(0.0f); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool bitwise_equal(const Tensor& o) const {
    if (shape_ != o.shape_) return false;
    return std::equal(data_.begin(), data_.end(), o.data_.begin());
  }

 private:
  std::vector<int64_t> shape_;
  std::vector<float, TrackingAllocator<float>> data_;
};

inline int64_t numel_of(const std::vector<int64_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), int64_t{1}, std::multiplies<int64_t>());
}

}  // namespace ppaudit

#endif  // PPAUDIT_TENSOR_HPP_
