/*
 * Copyright 2026 The qft Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace qft {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major float32 tensor with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  /// Construction from untrusted input: rejects NaN/Inf.
  static Tensor from_external(Shape shape, std::vector<float> data);
  static Tensor scalar(float value) { return Tensor(Shape{1}, std::vector<float>{value}); }
  static Tensor vector(std::vector<float> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  /// Value of a single-element tensor.
  float item() const;

  Tensor reshaped(Shape shape) const;
  void fill(float value);
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Same shape and bit-identical payload (distinguishes -0.0 and NaN payloads).
bool bit_equal(const Tensor& a, const Tensor& b);

/// Round half away from zero. This is the single rounding rule used by the
/// simulation, the exports and the integer pipeline; swapping it here swaps
/// it everywhere.
inline float round_half_away(float x) { return std::round(x); }
inline double round_half_away(double x) { return std::round(x); }

}  // namespace qft
