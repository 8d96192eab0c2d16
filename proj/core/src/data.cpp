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

#include "qft/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>

#include "qft/error.hpp"

namespace qft {

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Box-Muller on mt19937_64 bits; std::normal_distribution is not
// reproducible across standard libraries.
class Normal {
 public:
  explicit Normal(std::uint64_t seed) : rng_(seed) {}
  float operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = (static_cast<double>(rng_() >> 11) + 0.5) * 0x1.0p-53;
    const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = static_cast<float>(r * std::sin(2.0 * std::numbers::pi * u2));
    has_spare_ = true;
    return static_cast<float>(r * std::cos(2.0 * std::numbers::pi * u2));
  }

 private:
  std::mt19937_64 rng_;
  float spare_ = 0.0f;
  bool has_spare_ = false;
};

}  // namespace

Tensor ImageSource::batch(std::size_t first, std::size_t count) const {
  const Shape& s = sample_shape();
  const std::size_t n = shape_numel(s);
  Shape bs = s;
  bs.insert(bs.begin(), count);
  Tensor out(bs);
  for (std::size_t b = 0; b < count; ++b) {
    const Tensor x = sample((first + b) % size());
    std::copy(x.data().begin(), x.data().end(), out.data().begin() + static_cast<long>(b * n));
  }
  return out;
}

GaussianMixtureSource::GaussianMixtureSource(MixtureConfig config) : config_(std::move(config)) {
  require(config_.components > 0 && config_.size > 0 && !config_.shape.empty(),
          ErrorCode::kInvalidArgument, "mixture needs components, samples and a shape");
  require(config_.channel_gain.empty() || config_.channel_gain.size() == config_.shape[0],
          ErrorCode::kShapeMismatch, "channel_gain must have one entry per channel");
  Normal normal(mix(config_.seed, ~0ULL));
  for (std::size_t k = 0; k < config_.components; ++k) {
    Tensor m(config_.shape);
    for (float& v : m.data()) v = config_.mean_scale * normal();
    means_.push_back(std::move(m));
  }
}

std::size_t GaussianMixtureSource::label(std::size_t index) const {
  return mix(config_.seed, index % config_.size) % config_.components;
}

std::vector<std::size_t> GaussianMixtureSource::labels(std::size_t first, std::size_t count) const {
  std::vector<std::size_t> out(count);
  for (std::size_t b = 0; b < count; ++b) out[b] = label(first + b);
  return out;
}

Tensor GaussianMixtureSource::sample(std::size_t index) const {
  index %= config_.size;
  Tensor x = means_[label(index)];
  Normal normal(mix(config_.seed ^ 0x5bd1e995ULL, index));
  for (float& v : x.data()) v += config_.noise * normal();
  if (!config_.channel_gain.empty()) {
    const std::size_t inner = x.numel() / config_.shape[0];
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] *= config_.channel_gain[i / inner];
  }
  return x;
}

RawTensorDirectory::RawTensorDirectory(const std::string& dir, Shape shape) : shape_(std::move(shape)) {
  namespace fs = std::filesystem;
  require(fs::is_directory(dir), ErrorCode::kNotFound, "data directory not found: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  const std::size_t n = shape_numel(shape_);
  for (const fs::path& p : files) {
    std::ifstream in(p, std::ios::binary);
    const std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    require(raw.size() % (4 * n) == 0, ErrorCode::kShapeMismatch,
            p.string() + " is not a whole number of " + shape_str(shape_) + " float32 samples");
    for (std::size_t i = 0; i < raw.size(); i += 4) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[i + b])) << (8 * b);
      data_.push_back(std::bit_cast<float>(u));
    }
  }
  count_ = data_.size() / n;
  require(count_ > 0, ErrorCode::kNotFound, "no samples in " + dir);
}

Tensor RawTensorDirectory::sample(std::size_t index) const {
  const std::size_t n = shape_numel(shape_);
  index %= count_;
  return Tensor(shape_, std::vector<float>(data_.begin() + static_cast<long>(index * n),
                                           data_.begin() + static_cast<long>((index + 1) * n)));
}

void write_raw_tensor(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::kIo, "cannot write " + path);
  for (float v : t.data()) {
    const std::uint32_t u = std::bit_cast<std::uint32_t>(v);
    const char b[4] = {static_cast<char>(u), static_cast<char>(u >> 8), static_cast<char>(u >> 16),
                       static_cast<char>(u >> 24)};
    out.write(b, 4);
  }
}

}  // namespace qft
