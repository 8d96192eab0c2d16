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
#include <span>
#include <string>
#include <vector>

#include "qft/dof.hpp"
#include "qft/graph.hpp"

namespace qft {

struct IntTensor {
  Shape shape;
  std::vector<std::int32_t> data;
};

/// One layer of the integer pipeline. Weighted layers carry W_hat, b_hat and
/// F; every layer that re-encodes carries its output zero point and clip
/// bounds.
struct DeployLayer {
  std::string name;
  LayerKind kind = LayerKind::kConv;
  std::vector<std::size_t> inputs;  ///< indices into DeployExport::layers
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t kernel = 2;
  std::size_t channels = 0;
  /// Output equals the first input (output layers, fused activations).
  bool identity = false;

  int weight_bits = 0;
  Shape weight_shape;
  std::vector<std::int32_t> w_hat;
  std::vector<std::int64_t> b_hat;
  std::vector<float> rescale;
  std::int32_t z_in = 0;

  std::int32_t zero_point = 0;
  std::vector<std::int32_t> lo;
  std::vector<std::int32_t> hi;
  /// ew_add: per input, per channel S_in/S_out. avgpool: a single 1/HW.
  std::vector<std::vector<float>> factors;
  std::vector<std::int32_t> input_zero_points;
};

struct DeployExport {
  int activation_bits = 8;
  bool activations_signed = false;
  int accumulator_bits = 32;
  Shape input_shape;
  std::vector<float> input_scale;
  std::int32_t input_zero_point = 0;
  std::string feature_layer;
  std::vector<DeployLayer> layers;  ///< topological order, input first

  std::size_t index(std::string_view name) const;
};

DeployExport export_dof(const NetGraph& graph, DofSet& dof);

/// Rejects exports whose integers leave their declared ranges or whose
/// accumulators could exceed the float-exact range of the simulation.
void validate_export(const DeployExport& exp);

/// Quantizes a float batch with the input scale and zero point.
IntTensor encode_input(const DeployExport& exp, const Tensor& input);

/// Pure-integer forward over a batch of input codes. Returns every layer's
/// output codes in export order.
std::vector<IntTensor> run_int(const DeployExport& exp, const IntTensor& input);

/// Evaluates one layer from the given input codes.
IntTensor run_int_layer(const DeployExport& exp, std::size_t layer,
                        std::span<const IntTensor* const> inputs);

struct LayerConformance {
  std::string name;
  long long max_abs_diff = 0;
  std::size_t mismatches = 0;
};

struct ConformanceReport {
  std::size_t samples = 0;
  /// Each layer fed the simulation's own input codes.
  std::vector<LayerConformance> layers;
  /// Whole network run from the input codes alone.
  std::vector<LayerConformance> end_to_end;

  bool passed() const;
  std::string to_json() const;
};

ConformanceReport check_exact(const NetGraph& graph, DofSet& dof, std::span<const Tensor> inputs);
/// Same comparison against an explicitly supplied export.
ConformanceReport check_exact(const NetGraph& graph, DofSet& dof, const DeployExport& exp,
                              std::span<const Tensor> inputs);

/// Binary payload: magic, version, per-layer table, little-endian integers.
std::vector<std::uint8_t> export_to_bytes(const DeployExport& exp);
std::string export_manifest(const DeployExport& exp);
DeployExport export_from_bytes(std::span<const std::uint8_t> bytes, const std::string& manifest);

void save_export(const DeployExport& exp, const std::string& bin_path,
                 const std::string& manifest_path);
DeployExport load_export(const std::string& bin_path, const std::string& manifest_path);

}  // namespace qft
