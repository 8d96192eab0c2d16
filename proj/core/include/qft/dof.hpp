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

#include "qft/autodiff.hpp"
#include "qft/graph.hpp"
#include "qft/solvers.hpp"

namespace qft {

/// Lower bound applied to every scale and rescale factor.
inline constexpr float kScaleFloor = 1e-8f;

enum class RescaleRank { kLayerwise, kChannelwise };

/// Which variables carry the scale freedom: activation scales plus rescale
/// factors, or per-layer left/right kernel scale vectors (channelwise only).
enum class Parameterization { kActivationScales, kDualScales };

struct HwConfig {
  RescaleRank rescale_rank = RescaleRank::kLayerwise;
  int weight_bits = 4;
  int activation_bits = 8;
  bool activations_signed = false;
  int accumulator_bits = 32;
  /// Off reproduces weight-only quantization with float activations.
  bool activation_quant_enabled = true;
  Parameterization parameterization = Parameterization::kActivationScales;
  /// Per-layer weight bit-width overrides (mixed precision).
  std::map<std::string, int> layer_weight_bits;

  void validate() const;
  int weight_bits_for(const std::string& layer) const;
  QuantSpec weight_spec(const std::string& layer) const;
  QuantSpec activation_spec() const;
};

enum class FusedActivation { kNone, kRelu, kRelu6 };

/// One activation scale vector shared by every tensor whose integer codes
/// live on the same grid: a producer's output, its fused activation, and
/// the pooling/relu layers that alias it.
struct ActGroup {
  std::string name;
  std::size_t layer = 0;
  std::size_t channels = 0;
  bool is_input = false;
  /// Not trainable regardless of flags (input edge, relu6 crossing).
  bool frozen = false;
  FusedActivation fused = FusedActivation::kNone;
  Parameter scale;
  float zero_point = 0.0f;
  /// Graph layers whose output codes are on this grid, defining layer first.
  std::vector<std::size_t> members;
  /// Weighted layers reading this group, directly or through aliases.
  std::vector<std::size_t> weighted_consumers;
  /// Groups that must share one zero point (concatenated together).
  std::size_t zero_point_tie = 0;
};

/// Contiguous run of channels of a layer's output taken from one group.
struct Segment {
  std::size_t group = 0;
  std::size_t channels = 0;
};

struct LayerDof {
  std::size_t layer = 0;
  std::string name;
  LayerKind kind = LayerKind::kConv;
  int weight_bits = 4;
  Parameter weight;
  Parameter bias;
  /// F: shape [1] (layerwise) or [Cout] (channelwise).
  Parameter rescale;
  /// Dual parameterization only.
  Parameter left;
  Parameter right;
  /// Dual parameterization: this layer's `left` defines the input group's
  /// scale (S_a = 1 / left).
  bool owns_input_scale = false;
};

struct TrainableFlags {
  bool weights = true;
  bool biases = true;
  bool activation_scales = true;
  bool rescale = true;
};

struct DofSet {
  HwConfig hw;
  std::vector<ActGroup> groups;
  std::vector<LayerDof> layers;
  /// Graph layer -> index into `layers`, or -1.
  std::vector<int> slot;
  /// Graph layer -> output scale layout.
  std::vector<std::vector<Segment>> out_segments;
  /// Graph layer -> true for relu/relu6 folded into their producer.
  std::vector<bool> fused_away;
  std::vector<std::string> notes;
  TrainableFlags flags;

  const LayerDof& layer_dof(std::size_t graph_layer) const;
  LayerDof& layer_dof(std::size_t graph_layer);
  /// Group of a layer's output when it is a single segment.
  std::size_t group_of(std::size_t graph_layer) const;
  std::size_t group_index(std::string_view name) const;

  /// Re-applies flags and freezes to Parameter::trainable.
  void apply_trainable();
  std::vector<Parameter*> parameters();
  std::vector<Parameter*> trainable_parameters();
  /// Enforces the scale floor on every scale-like parameter.
  void clamp_scales();
};

DofSet analyze_dof(const NetGraph& graph, const HwConfig& hw);

/// Kernel co-vectors from activation scales: left = 1 / S_in, right = S_out * F.
DualScale derive_scales(std::span<const float> s_a_in, std::span<const float> s_a_out,
                        std::span<const float> rescale);
struct InvertedScales {
  std::vector<float> s_a_in;
  std::vector<float> rescale;
};
InvertedScales invert_scales(const DualScale& dual, std::span<const float> s_a_out);

/// round(b / S_acc) - z_in * sum_m W_hat[m, n], checked against the
/// accumulator range. `w_hat` uses `view`.
std::vector<long long> quantize_bias_residue(std::span<const float> bias,
                                             std::span<const float> s_acc, float z_in,
                                             const Tensor& w_hat, const KernelView& view,
                                             int accumulator_bits = 32);

KernelView kernel_view(const LayerSpec& layer);

/// Tape-recorded offline subgraph.
struct LayerPlan {
  std::size_t layer = 0;
  Var s_in;
  Var left;
  Var right;
  Var rescale;
  Var w_hat;
  Var s_acc;
  Var b_hat;
  float z_in = 0.0f;
};

struct OfflinePlan {
  std::vector<LayerPlan> layers;
  /// Per group S_a (derived from `left` for owned groups in dual mode).
  std::vector<Var> group_scales;
};

OfflinePlan build_offline(Tape& tape, DofSet& dof, const NetGraph& graph);

/// Online HW-emulating forward. Returned Vars are indexed by graph layer and
/// hold integer codes (float-typed), or real values when activation
/// quantization is off. `input` is a float batch [B, ...input_shape].
std::vector<Var> simulate(Tape& tape, const NetGraph& graph, const DofSet& dof,
                          const OfflinePlan& plan, Var input);

/// S_a * (codes - Z) for a layer output; identity in weight-only mode.
Var decode(Tape& tape, const DofSet& dof, const OfflinePlan& plan, std::size_t layer, Var codes);

/// Activation scale vector of a layer's output (concatenated segments).
Var layer_scale(Tape& tape, const DofSet& dof, const OfflinePlan& plan, std::size_t layer);
float layer_zero_point(const DofSet& dof, std::size_t layer);

/// Clip bounds of a group's codes, per channel.
void group_bounds(const DofSet& dof, std::size_t group, std::vector<float>& lo,
                  std::vector<float>& hi);

/// Scalar-scale initialization from max-min calibration (activations) and
/// scalar MMSE (weights).
DofSet init_quantization(const NetGraph& graph, const HwConfig& hw,
                         std::span<const Tensor> calib_samples);

/// Convenience: decoded student features and logits for one batch.
struct StudentForward {
  std::vector<Var> codes;
  Var features;
  Var logits;
};
StudentForward student_forward(Tape& tape, const NetGraph& graph, DofSet& dof, Var input);

std::string hw_config_to_json(const HwConfig& hw);
/// Absent keys keep their defaults.
HwConfig hw_config_from_json(const std::string& text);

std::string snapshot_to_json(const DofSet& dof);
DofSet snapshot_from_json(const std::string& text, const NetGraph& graph);
void save_snapshot(const DofSet& dof, const std::string& path);
DofSet load_snapshot(const std::string& path, const NetGraph& graph);

/// Post-plan constraint audit: integer in-range kernels, exact dual
/// factorization, shared left scales across fan-out, zero pre-activation
/// zero-point. Returns violations (empty when clean).
std::vector<std::string> audit_constraints(DofSet& dof, const NetGraph& graph);

}  // namespace qft
