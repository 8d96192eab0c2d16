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

#include <algorithm>
#include <array>
#include <cmath>

#include "qft/dof.hpp"
#include "qft/error.hpp"

namespace qft {

namespace {

constexpr float kBiasCodeLimit = 16777216.0f;  // 2^24

Var scalar_const(Tape& tape, float v) { return tape.constant(Tensor::scalar(v)); }

Var segments_scale(const OfflinePlan& plan, const std::vector<Segment>& segs) {
  require(!segs.empty(), ErrorCode::kInvalidArgument, "empty scale layout");
  if (segs.size() == 1) return plan.group_scales.at(segs[0].group);
  std::vector<Var> parts;
  for (const Segment& s : segs) parts.push_back(plan.group_scales.at(s.group));
  return concat(parts, 0);
}

}  // namespace

Var layer_scale(Tape&, const DofSet& dof, const OfflinePlan& plan, std::size_t layer) {
  return segments_scale(plan, dof.out_segments.at(layer));
}

OfflinePlan build_offline(Tape& tape, DofSet& dof, const NetGraph& graph) {
  const bool dual = dof.hw.parameterization == Parameterization::kDualScales;
  const bool act_quant = dof.hw.activation_quant_enabled;
  OfflinePlan plan;
  plan.group_scales.resize(dof.groups.size());

  std::vector<Var> left_param(dof.layers.size()), right_param(dof.layers.size());
  if (dual) {
    for (std::size_t k = 0; k < dof.layers.size(); ++k) {
      left_param[k] = tape.parameter(dof.layers[k].left);
      right_param[k] = tape.parameter(dof.layers[k].right);
    }
  }
  for (std::size_t g = 0; g < dof.groups.size(); ++g) {
    const ActGroup& grp = dof.groups[g];
    if (dual && grp.weighted_consumers.size() == 1) {
      const std::size_t c = grp.weighted_consumers[0];
      if (dof.layer_dof(c).owns_input_scale) {
        plan.group_scales[g] = reciprocal(left_param[static_cast<std::size_t>(dof.slot[c])]);
        continue;
      }
    }
    plan.group_scales[g] = tape.parameter(dof.groups[g].scale);
  }

  for (std::size_t k = 0; k < dof.layers.size(); ++k) {
    LayerDof& d = dof.layers[k];
    const std::size_t i = d.layer;
    const std::size_t p = graph.producers(i)[0];
    LayerPlan lp;
    lp.layer = i;
    lp.z_in = layer_zero_point(dof, p);
    lp.s_in = layer_scale(tape, dof, plan, p);
    const Var s_out = plan.group_scales[dof.group_of(i)];
    if (dual) {
      lp.left = d.owns_input_scale ? left_param[k] : reciprocal(lp.s_in);
      lp.right = right_param[k];
      lp.rescale = div(lp.right, s_out, Broadcast::kSame);
    } else {
      lp.left = reciprocal(lp.s_in);
      lp.rescale = tape.parameter(d.rescale);
      const bool scalar_f = d.rescale.value.numel() == 1;
      lp.right = mul(s_out, lp.rescale, scalar_f ? Broadcast::kScalar : Broadcast::kSame);
    }
    const Var w = tape.parameter(d.weight);
    Var ratio;
    std::vector<std::size_t> out_axis;
    switch (d.kind) {
      case LayerKind::kDense:
        ratio = div(w, outer_product(lp.left, lp.right), Broadcast::kSame);
        out_axis = {1};
        break;
      case LayerKind::kConv:
        ratio = div(w, outer_product(lp.right, lp.left), Broadcast::kLeading);
        out_axis = {0};
        break;
      default:
        ratio = div(w, mul(lp.left, lp.right, Broadcast::kSame), Broadcast::kChannel, 0);
        out_axis = {0};
        break;
    }
    const float qmax = QuantSpec{d.weight_bits, true}.qmax();
    lp.w_hat = round_ste_clip(ratio, -qmax, qmax);
    lp.s_acc = lp.right;
    const Var b = tape.parameter(d.bias);
    if (act_quant) {
      Var b_r = round_ste_clip(div(b, lp.s_acc, Broadcast::kSame), -kBiasCodeLimit, kBiasCodeLimit);
      if (lp.z_in != 0.0f) {
        const Var colsum = reduce_sum(lp.w_hat, out_axis);
        b_r = sub(b_r, mul(colsum, scalar_const(tape, lp.z_in), Broadcast::kScalar),
                  Broadcast::kSame);
      }
      lp.b_hat = b_r;
    } else {
      lp.b_hat = b;
    }
    plan.layers.push_back(lp);
  }
  return plan;
}

std::vector<Var> simulate(Tape& tape, const NetGraph& graph, const DofSet& dof,
                          const OfflinePlan& plan, Var input) {
  const Shape xs = input.shape();
  const Shape& is = graph.input_shape();
  require(xs.size() == is.size() + 1 && std::equal(is.begin(), is.end(), xs.begin() + 1),
          ErrorCode::kShapeMismatch,
          "input " + shape_str(xs) + " does not match graph input " + shape_str(is));
  const bool act_quant = dof.hw.activation_quant_enabled;
  const QuantSpec a = dof.hw.activation_spec();
  std::vector<Var> out(graph.layers().size());
  std::vector<float> lo, hi;

  for (std::size_t i : graph.topo_order()) {
    const LayerSpec& l = graph.layer(i);
    const auto& prods = graph.producers(i);
    const Var x = prods.empty() ? input : out[prods[0]];
    if (dof.fused_away[i]) {
      out[i] = act_quant ? x : (l.kind == LayerKind::kRelu ? relu(x) : relu6(x));
      continue;
    }
    if (!act_quant) {
      switch (l.kind) {
        case LayerKind::kInput:
        case LayerKind::kOutput: out[i] = x; break;
        case LayerKind::kConv:
        case LayerKind::kDense:
        case LayerKind::kDepthwiseConv: {
          const LayerPlan& lp = plan.layers[static_cast<std::size_t>(dof.slot[i])];
          Var wq;
          if (l.kind == LayerKind::kDense) {
            wq = mul(lp.w_hat, outer_product(lp.left, lp.right), Broadcast::kSame);
            out[i] = matmul(x, wq);
          } else if (l.kind == LayerKind::kConv) {
            wq = mul(lp.w_hat, outer_product(lp.right, lp.left), Broadcast::kLeading);
            out[i] = conv2d(x, wq, l.stride, l.padding);
          } else {
            wq = mul(lp.w_hat, mul(lp.left, lp.right, Broadcast::kSame), Broadcast::kChannel, 0);
            out[i] = depthwise_conv2d(x, wq, l.stride, l.padding);
          }
          out[i] = add(out[i], lp.b_hat, Broadcast::kChannel, 1);
          break;
        }
        case LayerKind::kEwAdd: {
          Var acc = x;
          for (std::size_t k = 1; k < prods.size(); ++k) acc = add(acc, out[prods[k]], Broadcast::kSame);
          out[i] = acc;
          break;
        }
        case LayerKind::kRelu: out[i] = relu(x); break;
        case LayerKind::kRelu6: out[i] = relu6(x); break;
        case LayerKind::kAvgpoolGlobal: out[i] = avgpool_global(x); break;
        case LayerKind::kMaxpool: out[i] = maxpool(x, l.kernel, l.stride); break;
        case LayerKind::kConcat: {
          std::vector<Var> parts;
          for (std::size_t p : prods) parts.push_back(out[p]);
          out[i] = concat(parts, 1);
          break;
        }
        case LayerKind::kBatchnorm:
          fail(ErrorCode::kUnsupportedLayer, "batchnorm must be folded before simulation");
      }
      continue;
    }

    switch (l.kind) {
      case LayerKind::kInput: {
        const std::size_t g = dof.group_of(i);
        const ActGroup& grp = dof.groups[g];
        Tensor inv(Shape{grp.channels});
        for (std::size_t c = 0; c < grp.channels; ++c) inv[c] = 1.0f / grp.scale.value[c];
        const std::array<Var, 1> xs_in{x};
        const std::array<Var, 1> fs{tape.constant(inv)};
        out[i] = requantize(xs_in, fs, grp.zero_point, Tensor::scalar(a.qmin()),
                            Tensor::scalar(a.qmax()));
        break;
      }
      case LayerKind::kOutput: out[i] = x; break;
      case LayerKind::kConv:
      case LayerKind::kDense:
      case LayerKind::kDepthwiseConv: {
        const LayerPlan& lp = plan.layers[static_cast<std::size_t>(dof.slot[i])];
        Var acc;
        if (l.kind == LayerKind::kDense) {
          acc = matmul(x, lp.w_hat);
        } else if (l.kind == LayerKind::kConv) {
          acc = conv2d(x, lp.w_hat, l.stride, l.padding, lp.z_in);
        } else {
          acc = depthwise_conv2d(x, lp.w_hat, l.stride, l.padding, lp.z_in);
        }
        acc = add(acc, lp.b_hat, Broadcast::kChannel, 1);
        const std::size_t g = dof.group_of(i);
        group_bounds(dof, g, lo, hi);
        const std::array<Var, 1> xs_in{acc};
        const std::array<Var, 1> fs{lp.rescale};
        out[i] = requantize(xs_in, fs, dof.groups[g].zero_point, Tensor::vector(lo),
                            Tensor::vector(hi));
        break;
      }
      case LayerKind::kEwAdd: {
        const std::size_t g = dof.group_of(i);
        const Var s_out = plan.group_scales[g];
        std::vector<Var> xs_in, fs;
        for (std::size_t p : prods) {
          xs_in.push_back(sub(out[p], scalar_const(tape, layer_zero_point(dof, p)),
                              Broadcast::kScalar));
          fs.push_back(div(layer_scale(tape, dof, plan, p), s_out, Broadcast::kSame));
        }
        group_bounds(dof, g, lo, hi);
        out[i] = requantize(xs_in, fs, dof.groups[g].zero_point, Tensor::vector(lo),
                            Tensor::vector(hi));
        break;
      }
      case LayerKind::kRelu:
      case LayerKind::kRelu6: {
        const float z = layer_zero_point(dof, i);
        const Tensor s = layer_scale(tape, dof, plan, i).value();
        Tensor lo_t(Shape{s.numel()}, z), hi_t(Shape{s.numel()}, a.qmax());
        if (l.kind == LayerKind::kRelu6) {
          for (std::size_t c = 0; c < s.numel(); ++c) {
            hi_t[c] = std::min(a.qmax(), z + round_half_away(6.0f / s[c]));
          }
        }
        const std::array<Var, 1> xs_in{x};
        const std::array<Var, 1> fs{scalar_const(tape, 1.0f)};
        out[i] = requantize(xs_in, fs, 0.0f, std::move(lo_t), std::move(hi_t));
        break;
      }
      case LayerKind::kAvgpoolGlobal: {
        const float z = layer_zero_point(dof, i);
        const Shape s = x.shape();
        const Var sum = reduce_sum(sub(x, scalar_const(tape, z), Broadcast::kScalar), {0, 1});
        const std::array<Var, 1> xs_in{sum};
        const std::array<Var, 1> fs{scalar_const(tape, 1.0f / static_cast<float>(s[2] * s[3]))};
        out[i] = requantize(xs_in, fs, z, Tensor::scalar(a.qmin()), Tensor::scalar(a.qmax()));
        break;
      }
      case LayerKind::kMaxpool: out[i] = maxpool(x, l.kernel, l.stride); break;
      case LayerKind::kConcat: {
        layer_zero_point(dof, i);
        std::vector<Var> parts;
        for (std::size_t p : prods) parts.push_back(out[p]);
        out[i] = concat(parts, 1);
        break;
      }
      case LayerKind::kBatchnorm:
        fail(ErrorCode::kUnsupportedLayer, "batchnorm must be folded before simulation");
    }
  }
  return out;
}

Var decode(Tape& tape, const DofSet& dof, const OfflinePlan& plan, std::size_t layer, Var codes) {
  if (!dof.hw.activation_quant_enabled) return codes;
  const Var centered =
      sub(codes, scalar_const(tape, layer_zero_point(dof, layer)), Broadcast::kScalar);
  return mul(centered, layer_scale(tape, dof, plan, layer), Broadcast::kChannel, 1);
}

StudentForward student_forward(Tape& tape, const NetGraph& graph, DofSet& dof, Var input) {
  const OfflinePlan plan = build_offline(tape, dof, graph);
  StudentForward r;
  r.codes = simulate(tape, graph, dof, plan, input);
  r.features = decode(tape, dof, plan, graph.feature_index(), r.codes[graph.feature_index()]);
  const std::size_t last = graph.topo_order().back();
  r.logits = decode(tape, dof, plan, last, r.codes[last]);
  return r;
}

std::vector<std::string> audit_constraints(DofSet& dof, const NetGraph& graph) {
  std::vector<std::string> issues;
  Tape tape;
  tape.set_grad_enabled(false);
  const OfflinePlan plan = build_offline(tape, dof, graph);
  std::map<std::size_t, Tensor> left_of_group;
  for (const LayerPlan& lp : plan.layers) {
    const LayerDof& d = dof.layer_dof(lp.layer);
    const std::string ctx = "layer '" + d.name + "': ";
    const float qmax = QuantSpec{d.weight_bits, true}.qmax();
    for (float w : lp.w_hat.value().data()) {
      if (w != std::round(w) || std::fabs(w) > qmax) {
        issues.push_back(ctx + "quantized kernel value out of range or not integral");
        break;
      }
    }
    bool positive = true;
    for (const Tensor* t : {&lp.left.value(), &lp.right.value(), &lp.s_acc.value()}) {
      for (float v : t->data()) positive = positive && v > 0.0f && std::isfinite(v);
    }
    if (!positive) issues.push_back(ctx + "non-positive kernel scale");
    const auto& in = dof.out_segments[graph.producers(lp.layer)[0]];
    if (in.size() == 1) {
      auto [it, fresh] = left_of_group.emplace(in[0].group, lp.left.value());
      if (!fresh && !bit_equal(it->second, lp.left.value())) {
        issues.push_back(ctx + "left scale differs from another consumer of the same group");
      }
    }
    if (dof.hw.activation_quant_enabled && positive) {
      const KernelView v = kernel_view(graph.layer(lp.layer));
      const auto expect = quantize_bias_residue(d.bias.value.data(), lp.s_acc.value().data(),
                                                lp.z_in, lp.w_hat.value(), v,
                                                dof.hw.accumulator_bits);
      const Tensor& b = lp.b_hat.value();
      for (std::size_t j = 0; j < expect.size(); ++j) {
        if (static_cast<double>(b[j]) != static_cast<double>(expect[j])) {
          issues.push_back(ctx + "quantized bias does not cancel the input zero point");
          break;
        }
      }
    }
  }
  return issues;
}

}  // namespace qft
