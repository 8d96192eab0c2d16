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

#include "qft/dof.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qft/error.hpp"

namespace qft {

void HwConfig::validate() const {
  require(weight_bits >= 2 && weight_bits <= 16, ErrorCode::kInvalidArgument,
          "weight_bits must be in [2, 16]");
  require(activation_bits >= 2 && activation_bits <= 16, ErrorCode::kInvalidArgument,
          "activation_bits must be in [2, 16]");
  for (const auto& [name, bits] : layer_weight_bits) {
    require(bits >= 2 && bits <= 16, ErrorCode::kInvalidArgument,
            "weight bits of '" + name + "' must be in [2, 16]");
  }
  int max_wb = weight_bits;
  for (const auto& [name, bits] : layer_weight_bits) max_wb = std::max(max_wb, bits);
  require(accumulator_bits >= max_wb + activation_bits + 8 && accumulator_bits <= 63,
          ErrorCode::kInvalidArgument,
          "accumulator_bits must be >= weight_bits + activation_bits + 8 and <= 63");
  require(parameterization == Parameterization::kActivationScales ||
              rescale_rank == RescaleRank::kChannelwise,
          ErrorCode::kInvalidArgument, "dual-scale parameterization needs channelwise rescale");
}

int HwConfig::weight_bits_for(const std::string& layer) const {
  auto it = layer_weight_bits.find(layer);
  return it == layer_weight_bits.end() ? weight_bits : it->second;
}

QuantSpec HwConfig::weight_spec(const std::string& layer) const {
  return QuantSpec{weight_bits_for(layer), true};
}

QuantSpec HwConfig::activation_spec() const { return QuantSpec{activation_bits, activations_signed}; }

const LayerDof& DofSet::layer_dof(std::size_t graph_layer) const {
  require(graph_layer < slot.size() && slot[graph_layer] >= 0, ErrorCode::kInvalidArgument,
          "layer has no weight DoF");
  return layers[static_cast<std::size_t>(slot[graph_layer])];
}

LayerDof& DofSet::layer_dof(std::size_t graph_layer) {
  return const_cast<LayerDof&>(static_cast<const DofSet&>(*this).layer_dof(graph_layer));
}

std::size_t DofSet::group_of(std::size_t graph_layer) const {
  const auto& segs = out_segments.at(graph_layer);
  require(segs.size() == 1, ErrorCode::kInvalidArgument,
          "layer output spans " + std::to_string(segs.size()) + " scale groups");
  return segs[0].group;
}

std::size_t DofSet::group_index(std::string_view name) const {
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].name == name) return g;
  }
  fail(ErrorCode::kNotFound, "no activation group '" + std::string(name) + "'");
}

void DofSet::apply_trainable() {
  const bool dual = hw.parameterization == Parameterization::kDualScales;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const ActGroup& grp = groups[g];
    bool is_owned = false;
    if (dual && grp.weighted_consumers.size() == 1) {
      is_owned = layer_dof(grp.weighted_consumers[0]).owns_input_scale;
    }
    groups[g].scale.trainable = flags.activation_scales && !grp.frozen && !is_owned;
  }
  for (LayerDof& d : layers) {
    d.weight.trainable = flags.weights;
    d.bias.trainable = flags.biases;
    d.rescale.trainable = flags.rescale && !dual;
    d.left.trainable = dual && d.owns_input_scale && flags.activation_scales;
    d.right.trainable = dual && (flags.activation_scales || flags.rescale);
  }
}

std::vector<Parameter*> DofSet::parameters() {
  std::vector<Parameter*> out;
  for (ActGroup& g : groups) out.push_back(&g.scale);
  for (LayerDof& d : layers) {
    for (Parameter* p : {&d.weight, &d.bias, &d.rescale, &d.left, &d.right}) out.push_back(p);
  }
  return out;
}

std::vector<Parameter*> DofSet::trainable_parameters() {
  std::vector<Parameter*> out;
  for (Parameter* p : parameters()) {
    if (p->trainable) out.push_back(p);
  }
  return out;
}

void DofSet::clamp_scales() {
  auto floor = [](Parameter& p) {
    for (float& v : p.value.data()) v = std::max(v, kScaleFloor);
  };
  for (ActGroup& g : groups) floor(g.scale);
  for (LayerDof& d : layers) {
    floor(d.rescale);
    floor(d.left);
    floor(d.right);
  }
}

KernelView kernel_view(const LayerSpec& layer) {
  require(is_weighted(layer.kind), ErrorCode::kInvalidArgument,
          "layer '" + layer.name + "' has no kernel");
  return layer.kind == LayerKind::kDense ? matrix_view(layer.weights.shape())
                                         : conv_view(layer.weights.shape());
}

namespace {

std::size_t find_root(std::vector<std::size_t>& parent, std::size_t x) {
  while (parent[x] != x) x = parent[x] = parent[parent[x]];
  return x;
}

}  // namespace

DofSet analyze_dof(const NetGraph& graph, const HwConfig& hw) {
  hw.validate();
  DofSet dof;
  dof.hw = hw;
  const std::size_t n = graph.layers().size();
  dof.slot.assign(n, -1);
  dof.out_segments.assign(n, {});
  dof.fused_away.assign(n, false);

  auto new_group = [&](std::size_t layer, std::size_t channels) {
    ActGroup g;
    g.name = graph.layer(layer).name;
    g.layer = layer;
    g.channels = channels;
    g.scale = Parameter("sa/" + g.name, Tensor(Shape{channels}, 1.0f));
    g.members.push_back(layer);
    dof.groups.push_back(std::move(g));
    return dof.groups.size() - 1;
  };
  auto freeze = [&](std::size_t layer) {
    for (const Segment& s : dof.out_segments[layer]) dof.groups[s.group].frozen = true;
  };

  for (std::size_t i : graph.topo_order()) {
    const LayerSpec& l = graph.layer(i);
    const auto& prods = graph.producers(i);
    const std::size_t channels = graph.out_shape(i)[0];
    switch (l.kind) {
      case LayerKind::kBatchnorm:
        fail(ErrorCode::kUnsupportedLayer,
             "layer '" + l.name + "': batchnorm must be folded before DoF analysis");
      case LayerKind::kInput: {
        const std::size_t g = new_group(i, channels);
        dof.groups[g].is_input = true;
        dof.groups[g].frozen = true;
        dof.out_segments[i] = {{g, channels}};
        break;
      }
      case LayerKind::kConv:
      case LayerKind::kDense:
      case LayerKind::kDepthwiseConv:
      case LayerKind::kEwAdd: {
        const std::size_t g = new_group(i, channels);
        dof.out_segments[i] = {{g, channels}};
        const auto& cons = graph.consumers(i);
        if (cons.size() == 1) {
          const LayerKind ck = graph.layer(cons[0]).kind;
          if (ck == LayerKind::kRelu || ck == LayerKind::kRelu6) {
            dof.fused_away[cons[0]] = true;
            dof.groups[g].fused =
                ck == LayerKind::kRelu ? FusedActivation::kRelu : FusedActivation::kRelu6;
            dof.groups[g].frozen = ck == LayerKind::kRelu6;
          }
        }
        if (is_weighted(l.kind)) {
          LayerDof d;
          d.layer = i;
          d.name = l.name;
          d.kind = l.kind;
          d.weight_bits = hw.weight_bits_for(l.name);
          d.weight = Parameter("w/" + l.name, l.weights);
          d.bias = Parameter("b/" + l.name, l.bias);
          const std::size_t f = hw.rescale_rank == RescaleRank::kChannelwise ? channels : 1;
          d.rescale = Parameter("f/" + l.name, Tensor(Shape{f}, 1.0f));
          d.left = Parameter("left/" + l.name, Tensor(Shape{l.in_channels()}, 1.0f));
          d.right = Parameter("right/" + l.name, Tensor(Shape{channels}, 1.0f));
          dof.slot[i] = static_cast<int>(dof.layers.size());
          dof.layers.push_back(std::move(d));
          for (const Segment& s : dof.out_segments[prods[0]]) {
            auto& wc = dof.groups[s.group].weighted_consumers;
            if (std::find(wc.begin(), wc.end(), i) == wc.end()) wc.push_back(i);
          }
        }
        break;
      }
      case LayerKind::kRelu:
      case LayerKind::kRelu6:
      case LayerKind::kMaxpool:
      case LayerKind::kAvgpoolGlobal:
      case LayerKind::kOutput:
        dof.out_segments[i] = dof.out_segments[prods[0]];
        if (!dof.fused_away[i]) {
          for (const Segment& s : dof.out_segments[i]) dof.groups[s.group].members.push_back(i);
          if (l.kind == LayerKind::kRelu6) freeze(i);
        } else {
          dof.groups[dof.out_segments[i][0].group].members.push_back(i);
        }
        break;
      case LayerKind::kConcat:
        for (std::size_t p : prods) {
          for (const Segment& s : dof.out_segments[p]) dof.out_segments[i].push_back(s);
        }
        break;
    }
  }

  std::vector<std::size_t> parent(dof.groups.size());
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  for (const auto& segs : dof.out_segments) {
    for (std::size_t k = 1; k < segs.size(); ++k) {
      parent[find_root(parent, segs[k].group)] = find_root(parent, segs[0].group);
    }
  }
  for (std::size_t g = 0; g < dof.groups.size(); ++g) {
    dof.groups[g].zero_point_tie = find_root(parent, g);
  }

  for (const ActGroup& g : dof.groups) {
    if (g.weighted_consumers.size() > 1 && hw.rescale_rank == RescaleRank::kChannelwise) {
      dof.notes.push_back("group '" + g.name + "' fans out to " +
                          std::to_string(g.weighted_consumers.size()) +
                          " weighted layers; they share one activation scale (per-edge recode "
                          "factors are not modeled)");
    }
  }

  if (hw.parameterization == Parameterization::kDualScales) {
    for (std::size_t g = 0; g < dof.groups.size(); ++g) {
      const ActGroup& grp = dof.groups[g];
      if (grp.frozen || grp.weighted_consumers.empty()) continue;
      require(grp.weighted_consumers.size() == 1, ErrorCode::kConflictingConstraints,
              "group '" + grp.name +
                  "' feeds several weighted layers; independent left scales would conflict");
      const std::size_t c = grp.weighted_consumers[0];
      const auto& in = dof.out_segments[graph.producers(c)[0]];
      if (graph.layer(c).kind != LayerKind::kDepthwiseConv && in.size() == 1 &&
          in[0].group == g) {
        dof.layer_dof(c).owns_input_scale = true;
      }
    }
  }
  dof.apply_trainable();
  return dof;
}

DualScale derive_scales(std::span<const float> s_a_in, std::span<const float> s_a_out,
                        std::span<const float> rescale) {
  require(rescale.size() == 1 || rescale.size() == s_a_out.size(), ErrorCode::kShapeMismatch,
          "rescale must be scalar or match the output channels");
  for (auto span : {s_a_in, s_a_out, rescale}) {
    for (float v : span) {
      require(v > 0.0f, ErrorCode::kNonPositiveScale, "derive_scales needs positive inputs");
    }
  }
  DualScale d;
  for (float v : s_a_in) d.left.push_back(1.0f / v);
  for (std::size_t j = 0; j < s_a_out.size(); ++j) {
    d.right.push_back(s_a_out[j] * rescale[rescale.size() == 1 ? 0 : j]);
  }
  return d;
}

InvertedScales invert_scales(const DualScale& dual, std::span<const float> s_a_out) {
  require(dual.right.size() == s_a_out.size(), ErrorCode::kShapeMismatch,
          "right scale and output activation scale differ in length");
  for (const auto* v : {&dual.left, &dual.right}) {
    for (float x : *v) {
      require(x > 0.0f, ErrorCode::kNonPositiveScale, "invert_scales needs positive inputs");
    }
  }
  for (float x : s_a_out) {
    require(x > 0.0f, ErrorCode::kNonPositiveScale, "invert_scales needs positive inputs");
  }
  InvertedScales r;
  for (float l : dual.left) r.s_a_in.push_back(1.0f / l);
  for (std::size_t j = 0; j < s_a_out.size(); ++j) r.rescale.push_back(dual.right[j] / s_a_out[j]);
  return r;
}

std::vector<long long> quantize_bias_residue(std::span<const float> bias,
                                             std::span<const float> s_acc, float z_in,
                                             const Tensor& w_hat, const KernelView& v,
                                             int accumulator_bits) {
  require(bias.size() == v.n && s_acc.size() == v.n && w_hat.numel() == v.numel(),
          ErrorCode::kShapeMismatch, "bias, accumulator scale and kernel disagree");
  const long long limit = 1LL << (accumulator_bits - 1);
  std::vector<long long> out(v.n);
  for (std::size_t j = 0; j < v.n; ++j) {
    require(s_acc[j] > 0.0f, ErrorCode::kNonPositiveScale, "accumulator scale must be positive");
    long long colsum = 0;
    for (std::size_t i = 0; i < v.m; ++i) {
      for (std::size_t t = 0; t < v.taps; ++t) {
        const float w = w_hat[v.index(i, j, t)];
        require(w == std::round(w), ErrorCode::kInvalidArgument, "quantized kernel is not integral");
        colsum += static_cast<long long>(w);
      }
    }
    const double r = round_half_away(static_cast<double>(bias[j] / s_acc[j]));
    require(std::fabs(r) < static_cast<double>(limit), ErrorCode::kRangeViolation,
            "quantized bias exceeds the accumulator range");
    out[j] = static_cast<long long>(r) - static_cast<long long>(z_in) * colsum;
    require(std::llabs(out[j]) < limit, ErrorCode::kRangeViolation,
            "quantized bias exceeds the accumulator range");
  }
  return out;
}

void group_bounds(const DofSet& dof, std::size_t group, std::vector<float>& lo,
                  std::vector<float>& hi) {
  const ActGroup& g = dof.groups.at(group);
  const QuantSpec a = dof.hw.activation_spec();
  lo.assign(g.channels, a.qmin());
  hi.assign(g.channels, a.qmax());
  if (g.fused == FusedActivation::kNone) return;
  for (std::size_t c = 0; c < g.channels; ++c) {
    lo[c] = g.zero_point;
    if (g.fused == FusedActivation::kRelu6) {
      hi[c] = std::min(a.qmax(), g.zero_point + round_half_away(6.0f / g.scale.value[c]));
    }
  }
}

float layer_zero_point(const DofSet& dof, std::size_t layer) {
  const auto& segs = dof.out_segments.at(layer);
  require(!segs.empty(), ErrorCode::kInvalidArgument, "layer has no scale layout");
  const float z = dof.groups[segs[0].group].zero_point;
  for (const Segment& s : segs) {
    require(dof.groups[s.group].zero_point == z, ErrorCode::kConflictingConstraints,
            "concatenated groups carry different zero points");
  }
  return z;
}

DofSet init_quantization(const NetGraph& graph, const HwConfig& hw,
                         std::span<const Tensor> calib_samples) {
  DofSet dof = analyze_dof(graph, hw);
  const auto stats = calibrate_activations(graph, calib_samples);
  const QuantSpec a = hw.activation_spec();

  // Range of each zero-point tie set (a single group unless concatenated).
  std::map<std::size_t, ActivationStats> tie_range;
  for (const ActGroup& g : dof.groups) {
    const std::size_t rep = g.fused == FusedActivation::kNone ? g.members[0] : g.members[1];
    const ActivationStats& s = stats.at(graph.layer(rep).name);
    auto [it, fresh] = tie_range.emplace(g.zero_point_tie, s);
    if (!fresh) {
      it->second.min = std::min(it->second.min, s.min);
      it->second.max = std::max(it->second.max, s.max);
    }
  }
  for (ActGroup& g : dof.groups) {
    const ActivationStats& s = tie_range.at(g.zero_point_tie);
    const float lo = std::min(s.min, 0.0f), hi = std::max(s.max, 0.0f);
    float scale;
    if (a.is_signed) {
      scale = std::max(-lo, hi) / a.qmax();
      g.zero_point = 0.0f;
    } else {
      scale = (hi - lo) / (a.qmax() - a.qmin());
    }
    if (!(scale > kScaleFloor)) {
      warn("activation '" + g.name + "' has zero calibration range; using scale 1e-8");
      scale = kScaleFloor;
    }
    if (!a.is_signed) {
      g.zero_point = std::clamp(round_half_away(-lo / scale), a.qmin(), a.qmax());
    }
    g.scale.value.fill(scale);
  }

  for (LayerDof& d : dof.layers) {
    const LayerSpec& l = graph.layer(d.layer);
    const float s_w = ppq(l.weights.data(), hw.weight_spec(l.name)).scale;
    const std::size_t gin = dof.out_segments[graph.producers(d.layer)[0]][0].group;
    const float s_in = dof.groups[gin].scale.value[0];
    const float s_out = dof.groups[dof.group_of(d.layer)].scale.value[0];
    d.rescale.value.fill(std::max(s_w * s_in / s_out, kScaleFloor));
    if (hw.parameterization == Parameterization::kDualScales) {
      d.left.value.fill(1.0f / s_in);
      for (float& r : d.right.value.data()) r = s_out * d.rescale.value[0];
    }
  }
  return dof;
}

}  // namespace qft
