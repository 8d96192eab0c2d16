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

#include "qft/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

#include "qft/error.hpp"

namespace qft {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require(data_.size() == shape_numel(shape_), ErrorCode::kShapeMismatch,
          "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
              shape_str(shape_));
}

Tensor Tensor::from_external(Shape shape, std::vector<float> data) {
  Tensor t(std::move(shape), std::move(data));
  require(t.all_finite(), ErrorCode::kNonFinite, "tensor contains NaN or Inf");
  return t;
}

Tensor Tensor::vector(std::vector<float> values) {
  Shape shape{values.size()};
  return Tensor(std::move(shape), std::move(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  require(axis < shape_.size(), ErrorCode::kShapeMismatch,
          "axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
  return shape_[axis];
}

float Tensor::item() const {
  require(data_.size() == 1, ErrorCode::kShapeMismatch,
          "item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  require(shape_numel(shape) == data_.size(), ErrorCode::kShapeMismatch,
          "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return a.numel() == 0 ||
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0;
}

}  // namespace qft
