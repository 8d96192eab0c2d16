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

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "qft/tensor.hpp"

namespace qft {

/// Random-access source of unlabeled images. Index i always yields the same
/// sample, so batches are reproducible without shared RNG state.
class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual const Shape& sample_shape() const = 0;
  /// Number of distinct samples; indices wrap around.
  virtual std::size_t size() const = 0;
  virtual Tensor sample(std::size_t index) const = 0;

  /// [count, ...sample_shape] starting at `first`.
  Tensor batch(std::size_t first, std::size_t count) const;
};

struct MixtureConfig {
  Shape shape{3, 8, 8};
  std::size_t components = 10;
  std::size_t size = 1u << 20;
  float mean_scale = 1.0f;
  float noise = 0.5f;
  /// Optional per-channel multipliers applied to every sample.
  std::vector<float> channel_gain;
  std::uint64_t seed = 0;
};

/// Gaussian-mixture images: a fixed random mean image per component plus
/// i.i.d. noise. The component index doubles as a class label for
/// evaluation code; training never reads it.
class GaussianMixtureSource : public ImageSource {
 public:
  explicit GaussianMixtureSource(MixtureConfig config);

  const Shape& sample_shape() const override { return config_.shape; }
  std::size_t size() const override { return config_.size; }
  Tensor sample(std::size_t index) const override;

  std::size_t label(std::size_t index) const;
  std::vector<std::size_t> labels(std::size_t first, std::size_t count) const;
  const std::vector<Tensor>& means() const { return means_; }

 private:
  MixtureConfig config_;
  std::vector<Tensor> means_;
};

/// Directory of raw little-endian float32 files, each one or more samples of
/// `shape`, read in lexicographic file order.
class RawTensorDirectory : public ImageSource {
 public:
  RawTensorDirectory(const std::string& dir, Shape shape);

  const Shape& sample_shape() const override { return shape_; }
  std::size_t size() const override { return count_; }
  Tensor sample(std::size_t index) const override;

 private:
  Shape shape_;
  std::size_t count_ = 0;
  std::vector<float> data_;
};

void write_raw_tensor(const std::string& path, const Tensor& t);

}  // namespace qft
