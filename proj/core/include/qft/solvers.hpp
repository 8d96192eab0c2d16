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

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "qft/tensor.hpp"

namespace qft {

class NetGraph;

struct QuantSpec {
  int bits = 4;
  bool is_signed = true;

  float qmin() const;
  float qmax() const;
};

/// Kernel scale as an outer product: S_w[m, n] = left[m] * right[n].
struct DualScale {
  std::vector<float> left;
  std::vector<float> right;
};

/// Index map of a kernel tensor onto [m input channels, n output channels,
/// taps]. Dense [in, out] is row-major over (m, n); conv [out, in, kh, kw]
/// and depthwise [C, 1, kh, kw] are output-major.
struct KernelView {
  std::size_t m = 1;
  std::size_t n = 1;
  std::size_t taps = 1;
  bool out_major = false;

  std::size_t index(std::size_t i, std::size_t j, std::size_t t) const {
    return out_major ? (j * m + i) * taps + t : (i * n + j) * taps + t;
  }
  std::size_t numel() const { return m * n * taps; }
};

/// Dense [m, n] matrix.
KernelView matrix_view(const Shape& shape);
/// Conv [out, in, kh, kw] or depthwise [C, 1, kh, kw] kernel.
KernelView conv_view(const Shape& shape);

/// s * (clip(round(x / s) + z, qmin, qmax) - z).
Tensor fakequant(const Tensor& x, float s, const QuantSpec& q, float zero_point = 0.0f);
/// Per-slice scale along `axis`.
Tensor fakequant(const Tensor& x, std::span<const float> s, std::size_t axis, const QuantSpec& q,
                 float zero_point = 0.0f);
Tensor fakequant(const Tensor& x, const DualScale& s, const KernelView& view, const QuantSpec& q);

enum class PpqSeeding {
  /// Exact minimum over all rounding-assignment intervals, then projections.
  kSweep,
  /// s = max|x| / qmax, then projections only.
  kMaxAbs,
};

struct PpqResult {
  float scale = 0.0f;
  double mse = 0.0;
  int iterations = 0;
};

PpqResult ppq(std::span<const float> x, const QuantSpec& q, int iterations = 10,
              PpqSeeding seeding = PpqSeeding::kSweep);

/// Mean squared error of x against its quantization at scale s.
double quant_mse(std::span<const float> x, float s, const QuantSpec& q);

struct ApqResult {
  DualScale scale;
  double mse = 0.0;
  int alternations = 0;
};

ApqResult apq(const Tensor& w, const KernelView& view, const QuantSpec& q, int iterations = 10);
ApqResult apq(const Tensor& w, const QuantSpec& q, int iterations = 10);

double dual_mse(const Tensor& w, const KernelView& view, const DualScale& s, const QuantSpec& q);

/// Per output-channel (axis 1 of the view) or per input-channel (axis 0)
/// scalar MMSE scales.
std::vector<PpqResult> slice_ppq(const Tensor& w, const KernelView& view, int axis,
                                 const QuantSpec& q, int iterations = 10);

struct MmseReport {
  double layerwise_mse = 0.0;
  double channelwise_mse = 0.0;
  double doubly_channelwise_mse = 0.0;
  /// MMSE-optimal range over max|x|.
  double layerwise_range_ratio = 0.0;
  std::vector<double> slice_range_ratio;
};

MmseReport mmse_report(const Tensor& w, const KernelView& view, const QuantSpec& q,
                       int iterations = 10);

struct ActivationStats {
  float min = 0.0f;
  float max = 0.0f;
};

/// Running min/max of every layer's FP activation over `samples` (each a
/// batched input). Keyed by layer name.
std::map<std::string, ActivationStats> calibrate_activations(const NetGraph& graph,
                                                             std::span<const Tensor> samples);

}  // namespace qft
