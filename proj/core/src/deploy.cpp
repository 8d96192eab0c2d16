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

#include "qft/deploy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "kernels.hpp"
#include "qft/error.hpp"

namespace qft {

namespace {

constexpr double kFloatExact = 16777216.0;  // 2^24

std::int32_t to_int32(float v, const std::string& what) {
  require(std::isfinite(v) && v == std::round(v) &&
              std::fabs(v) <= static_cast<float>(std::numeric_limits<std::int32_t>::max()),
          ErrorCode::kRangeViolation, what + " is not a representable integer");
  return static_cast<std::int32_t>(v);
}

std::vector<std::int32_t> to_int32(std::span<const float> v, const std::string& what) {
  std::vector<std::int32_t> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = to_int32(v[i], what);
  return out;
}

IntTensor to_int(const Tensor& t) {
  IntTensor r;
  r.shape = t.shape();
  r.data.resize(t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i) r.data[i] = static_cast<std::int32_t>(t[i]);
  return r;
}

std::size_t inner_of(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t a = 2; a < s.size(); ++a) n *= s[a];
  return n;
}

std::int32_t recode(double acc, float f, std::int32_t z, std::int32_t lo, std::int32_t hi) {
  const double v = round_half_away(acc * static_cast<double>(f)) + static_cast<double>(z);
  return static_cast<std::int32_t>(std::clamp(v, static_cast<double>(lo), static_cast<double>(hi)));
}

IntTensor recode_all(const Shape& shape, const std::vector<long long>& acc, const DeployLayer& l) {
  IntTensor y;
  y.shape = shape;
  y.data.resize(acc.size());
  const std::size_t C = shape[1];
  const std::size_t inner = inner_of(shape);
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const std::size_t c = (i / inner) % C;
    const float f = l.rescale.size() == 1 ? l.rescale[0] : l.rescale[c];
    y.data[i] = recode(static_cast<double>(acc[i]), f, l.zero_point, l.lo[c], l.hi[c]);
  }
  return y;
}

void add_stats(std::vector<LayerConformance>& stats, std::size_t k, const IntTensor& a,
               const IntTensor& b) {
  LayerConformance& s = stats[k];
  if (a.shape != b.shape) {
    s.mismatches += std::max(a.data.size(), b.data.size());
    s.max_abs_diff = std::numeric_limits<long long>::max();
    return;
  }
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const long long d = std::llabs(static_cast<long long>(a.data[i]) - b.data[i]);
    if (d != 0) {
      ++s.mismatches;
      s.max_abs_diff = std::max(s.max_abs_diff, d);
    }
  }
}

}  // namespace

std::size_t DeployExport::index(std::string_view name) const {
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (layers[k].name == name) return k;
  }
  fail(ErrorCode::kNotFound, "export has no layer '" + std::string(name) + "'");
}

DeployExport export_dof(const NetGraph& graph, DofSet& dof) {
  require(dof.hw.activation_quant_enabled, ErrorCode::kInvalidArgument,
          "integer export needs activation quantization");
  Tape tape;
  tape.set_grad_enabled(false);
  const OfflinePlan plan = build_offline(tape, dof, graph);
  const QuantSpec a = dof.hw.activation_spec();

  DeployExport exp;
  exp.activation_bits = dof.hw.activation_bits;
  exp.activations_signed = dof.hw.activations_signed;
  exp.accumulator_bits = dof.hw.accumulator_bits;
  exp.input_shape = graph.input_shape();
  exp.feature_layer = graph.layer(graph.feature_index()).name;

  std::vector<std::size_t> pos(graph.layers().size());
  std::vector<float> lo, hi;
  for (std::size_t i : graph.topo_order()) {
    const LayerSpec& spec = graph.layer(i);
    DeployLayer l;
    l.name = spec.name;
    l.kind = spec.kind;
    l.stride = spec.stride;
    l.padding = spec.padding;
    l.kernel = spec.kernel;
    l.channels = graph.out_shape(i)[0];
    for (std::size_t p : graph.producers(i)) l.inputs.push_back(pos[p]);
    l.zero_point = to_int32(layer_zero_point(dof, i), "zero point of '" + l.name + "'");
    const std::string ctx = "layer '" + l.name + "'";

    if (dof.fused_away[i]) {
      l.identity = true;
    } else {
      switch (spec.kind) {
        case LayerKind::kInput: {
          const ActGroup& g = dof.groups[dof.group_of(i)];
          exp.input_scale = g.scale.value.values();
          exp.input_zero_point = l.zero_point;
          break;
        }
        case LayerKind::kOutput: l.identity = true; break;
        case LayerKind::kConv:
        case LayerKind::kDense:
        case LayerKind::kDepthwiseConv: {
          const LayerPlan& lp = plan.layers[static_cast<std::size_t>(dof.slot[i])];
          const LayerDof& d = dof.layer_dof(i);
          l.weight_bits = d.weight_bits;
          l.weight_shape = lp.w_hat.shape();
          l.w_hat = to_int32(lp.w_hat.value().data(), ctx + " kernel");
          for (float b : lp.b_hat.value().data()) {
            require(std::isfinite(b) && b == std::round(b), ErrorCode::kRangeViolation,
                    ctx + " bias is not integral");
            l.b_hat.push_back(static_cast<std::int64_t>(b));
          }
          l.rescale = lp.rescale.value().values();
          l.z_in = to_int32(lp.z_in, ctx + " input zero point");
          group_bounds(dof, dof.group_of(i), lo, hi);
          l.lo = to_int32(lo, ctx + " lower bound");
          l.hi = to_int32(hi, ctx + " upper bound");
          break;
        }
        case LayerKind::kEwAdd: {
          const std::size_t g = dof.group_of(i);
          const Tensor s_out = plan.group_scales[g].value();
          for (std::size_t p : graph.producers(i)) {
            const Tensor s_p = layer_scale(tape, dof, plan, p).value();
            std::vector<float> f(s_out.numel());
            for (std::size_t c = 0; c < f.size(); ++c) f[c] = s_p[c] / s_out[c];
            l.factors.push_back(std::move(f));
            l.input_zero_points.push_back(to_int32(layer_zero_point(dof, p), ctx));
          }
          group_bounds(dof, g, lo, hi);
          l.lo = to_int32(lo, ctx + " lower bound");
          l.hi = to_int32(hi, ctx + " upper bound");
          break;
        }
        case LayerKind::kRelu:
        case LayerKind::kRelu6: {
          const Tensor s = layer_scale(tape, dof, plan, i).value();
          l.lo.assign(s.numel(), l.zero_point);
          l.hi.assign(s.numel(), static_cast<std::int32_t>(a.qmax()));
          if (spec.kind == LayerKind::kRelu6) {
            for (std::size_t c = 0; c < s.numel(); ++c) {
              l.hi[c] = to_int32(std::min(a.qmax(), static_cast<float>(l.zero_point) +
                                                        round_half_away(6.0f / s[c])),
                                 ctx + " relu6 bound");
            }
          }
          break;
        }
        case LayerKind::kAvgpoolGlobal: {
          const Shape& in = graph.out_shape(graph.producers(i)[0]);
          l.factors.push_back({1.0f / static_cast<float>(in[1] * in[2])});
          l.lo.assign(l.channels, static_cast<std::int32_t>(a.qmin()));
          l.hi.assign(l.channels, static_cast<std::int32_t>(a.qmax()));
          break;
        }
        case LayerKind::kMaxpool:
        case LayerKind::kConcat: break;
        case LayerKind::kBatchnorm:
          fail(ErrorCode::kUnsupportedLayer, "batchnorm must be folded before export");
      }
    }
    pos[i] = exp.layers.size();
    exp.layers.push_back(std::move(l));
  }
  validate_export(exp);
  return exp;
}

void validate_export(const DeployExport& exp) {
  const QuantSpec a{exp.activation_bits, exp.activations_signed};
  const double amax = std::max(std::fabs(a.qmin()), std::fabs(a.qmax()));
  const long long acc_limit = 1LL << (exp.accumulator_bits - 1);
  for (const DeployLayer& l : exp.layers) {
    const std::string ctx = "layer '" + l.name + "'";
    for (std::size_t c = 0; c < l.lo.size(); ++c) {
      require(l.lo[c] >= a.qmin() && l.hi[c] <= a.qmax() && l.lo[c] <= l.hi[c],
              ErrorCode::kRangeViolation, ctx + " clip bounds outside the activation range");
    }
    for (float f : l.rescale) {
      require(std::isfinite(f) && f > 0.0f, ErrorCode::kNonPositiveScale,
              ctx + " rescale factor must be positive");
    }
    if (l.w_hat.empty()) continue;
    const long long wmax = (1LL << (l.weight_bits - 1)) - 1;
    for (std::int32_t w : l.w_hat) {
      require(std::llabs(w) <= wmax, ErrorCode::kRangeViolation,
              ctx + " kernel value outside the " + std::to_string(l.weight_bits) + "-bit range");
    }
    // Worst-case partial sum per output channel.
    const std::size_t cout = l.b_hat.size();
    std::vector<double> bound(cout, 0.0);
    const std::size_t n = l.w_hat.size();
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t c = 0;
      if (l.kind == LayerKind::kDense) {
        c = i % cout;
      } else {
        c = i / (n / cout);
      }
      bound[c] += std::fabs(static_cast<double>(l.w_hat[i])) * amax;
    }
    for (std::size_t c = 0; c < cout; ++c) {
      require(std::llabs(l.b_hat[c]) < acc_limit, ErrorCode::kRangeViolation,
              ctx + " bias outside the accumulator range");
      const double worst = bound[c] + std::fabs(static_cast<double>(l.b_hat[c]));
      require(worst < kFloatExact, ErrorCode::kRangeViolation,
              ctx + " accumulator may exceed the float-exact range");
    }
  }
}

IntTensor encode_input(const DeployExport& exp, const Tensor& input) {
  const QuantSpec a{exp.activation_bits, exp.activations_signed};
  Shape shape = input.shape();
  if (shape.size() == exp.input_shape.size()) shape.insert(shape.begin(), 1);
  require(shape.size() == exp.input_shape.size() + 1 &&
              std::equal(exp.input_shape.begin(), exp.input_shape.end(), shape.begin() + 1),
          ErrorCode::kShapeMismatch, "input " + shape_str(input.shape()) + " does not match export");
  IntTensor r;
  r.shape = shape;
  r.data.resize(input.numel());
  const std::size_t C = shape[1];
  const std::size_t inner = inner_of(shape);
  for (std::size_t i = 0; i < input.numel(); ++i) {
    const std::size_t c = (i / inner) % C;
    const float inv = 1.0f / exp.input_scale[exp.input_scale.size() == 1 ? 0 : c];
    r.data[i] = recode(static_cast<double>(input[i]), inv, exp.input_zero_point,
                       static_cast<std::int32_t>(a.qmin()), static_cast<std::int32_t>(a.qmax()));
  }
  return r;
}

IntTensor run_int_layer(const DeployExport& exp, std::size_t k,
                        std::span<const IntTensor* const> inputs) {
  const DeployLayer& l = exp.layers.at(k);
  const long long limit = 1LL << (exp.accumulator_bits - 1);
  require(!inputs.empty() || l.kind == LayerKind::kInput, ErrorCode::kInvalidArgument,
          "layer '" + l.name + "' has no inputs");
  if (l.kind == LayerKind::kInput || l.identity) return *inputs[0];
  const IntTensor& x = *inputs[0];
  const std::string overflow = "accumulator overflow in layer '" + l.name + "'";

  switch (l.kind) {
    case LayerKind::kConv:
    case LayerKind::kDepthwiseConv: {
      const bool dw = l.kind == LayerKind::kDepthwiseConv;
      const kernels::ConvGeom g = kernels::conv_geom(x.shape, l.weight_shape, l.stride, l.padding, dw);
      std::vector<long long> acc(g.batch * g.cout * g.ho * g.wo);
      const std::vector<long long> bias(l.b_hat.begin(), l.b_hat.end());
      const bool ok = dw ? kernels::depthwise_int(g, x.data.data(), l.w_hat.data(), l.z_in,
                                                  bias.data(), limit, acc.data())
                         : kernels::conv2d_int(g, x.data.data(), l.w_hat.data(), l.z_in,
                                               bias.data(), limit, acc.data());
      require(ok, ErrorCode::kOverflow, overflow);
      return recode_all(Shape{g.batch, g.cout, g.ho, g.wo}, acc, l);
    }
    case LayerKind::kDense: {
      require(x.shape.size() == 2 && x.shape[1] == l.weight_shape[0], ErrorCode::kShapeMismatch,
              "dense input " + shape_str(x.shape) + " does not match layer '" + l.name + "'");
      const std::size_t B = x.shape[0], m = l.weight_shape[0], n = l.weight_shape[1];
      std::vector<long long> acc(B * n);
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t j = 0; j < n; ++j) {
          long long s = l.b_hat[j];
          require(std::llabs(s) < limit, ErrorCode::kOverflow, overflow);
          for (std::size_t i = 0; i < m; ++i) {
            s += static_cast<long long>(x.data[b * m + i]) * l.w_hat[i * n + j];
            require(std::llabs(s) < limit, ErrorCode::kOverflow, overflow);
          }
          acc[b * n + j] = s;
        }
      }
      return recode_all(Shape{B, n}, acc, l);
    }
    case LayerKind::kEwAdd: {
      IntTensor y;
      y.shape = x.shape;
      y.data.resize(x.data.size());
      const std::size_t C = x.shape[1];
      const std::size_t inner = inner_of(x.shape);
      for (const IntTensor* in : inputs) {
        require(in->shape == x.shape, ErrorCode::kShapeMismatch, "ew_add operands differ in shape");
      }
      for (std::size_t i = 0; i < y.data.size(); ++i) {
        const std::size_t c = (i / inner) % C;
        double acc = 0.0;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          const double centered =
              static_cast<double>(inputs[j]->data[i]) - static_cast<double>(l.input_zero_points[j]);
          acc += centered * static_cast<double>(l.factors[j][c]);
        }
        y.data[i] = recode(acc, 1.0f, l.zero_point, l.lo[c], l.hi[c]);
      }
      return y;
    }
    case LayerKind::kRelu:
    case LayerKind::kRelu6: {
      IntTensor y = x;
      const std::size_t C = x.shape[1];
      const std::size_t inner = inner_of(x.shape);
      for (std::size_t i = 0; i < y.data.size(); ++i) {
        const std::size_t c = (i / inner) % C;
        y.data[i] = std::clamp(y.data[i], l.lo[c], l.hi[c]);
      }
      return y;
    }
    case LayerKind::kAvgpoolGlobal: {
      const std::size_t B = x.shape[0], C = x.shape[1], hw = inner_of(x.shape);
      IntTensor y;
      y.shape = Shape{B, C};
      y.data.resize(B * C);
      for (std::size_t bc = 0; bc < B * C; ++bc) {
        long long s = 0;
        for (std::size_t t = 0; t < hw; ++t) s += x.data[bc * hw + t] - l.zero_point;
        y.data[bc] = recode(static_cast<double>(s), l.factors[0][0], l.zero_point, l.lo[bc % C],
                            l.hi[bc % C]);
      }
      return y;
    }
    case LayerKind::kMaxpool: {
      const std::size_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
      const std::size_t k = l.kernel, s = l.stride;
      const std::size_t Ho = (H - k) / s + 1, Wo = (W - k) / s + 1;
      IntTensor y;
      y.shape = Shape{B, C, Ho, Wo};
      y.data.resize(B * C * Ho * Wo);
      std::size_t o = 0;
      for (std::size_t bc = 0; bc < B * C; ++bc) {
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          for (std::size_t ox = 0; ox < Wo; ++ox, ++o) {
            std::int32_t best = std::numeric_limits<std::int32_t>::min();
            for (std::size_t ky = 0; ky < k; ++ky) {
              for (std::size_t kx = 0; kx < k; ++kx) {
                best = std::max(best, x.data[bc * H * W + (oy * s + ky) * W + ox * s + kx]);
              }
            }
            y.data[o] = best;
          }
        }
      }
      return y;
    }
    case LayerKind::kConcat: {
      const std::size_t B = x.shape[0], inner = inner_of(x.shape);
      std::size_t C = 0;
      for (const IntTensor* in : inputs) C += in->shape[1];
      IntTensor y;
      y.shape = x.shape;
      y.shape[1] = C;
      y.data.reserve(B * C * inner);
      for (std::size_t b = 0; b < B; ++b) {
        for (const IntTensor* in : inputs) {
          const std::size_t n = in->shape[1] * inner;
          y.data.insert(y.data.end(), in->data.begin() + static_cast<long>(b * n),
                        in->data.begin() + static_cast<long>((b + 1) * n));
        }
      }
      return y;
    }
    default:
      fail(ErrorCode::kUnsupportedLayer, "layer '" + l.name + "' cannot run on integers");
  }
}

std::vector<IntTensor> run_int(const DeployExport& exp, const IntTensor& input) {
  std::vector<IntTensor> out(exp.layers.size());
  std::vector<const IntTensor*> ins;
  for (std::size_t k = 0; k < exp.layers.size(); ++k) {
    ins.clear();
    if (exp.layers[k].kind == LayerKind::kInput) {
      ins.push_back(&input);
    } else {
      for (std::size_t p : exp.layers[k].inputs) ins.push_back(&out[p]);
    }
    out[k] = run_int_layer(exp, k, ins);
  }
  return out;
}

bool ConformanceReport::passed() const {
  for (const auto* v : {&layers, &end_to_end}) {
    for (const LayerConformance& l : *v) {
      if (l.mismatches != 0) return false;
    }
  }
  return true;
}

std::string ConformanceReport::to_json() const {
  nlohmann::json j;
  j["samples"] = samples;
  j["passed"] = passed();
  auto rows = [](const std::vector<LayerConformance>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const LayerConformance& l : v) {
      a.push_back({{"layer", l.name}, {"max_abs_diff", l.max_abs_diff}, {"mismatches", l.mismatches}});
    }
    return a;
  };
  j["layers"] = rows(layers);
  j["end_to_end"] = rows(end_to_end);
  return j.dump(1);
}

ConformanceReport check_exact(const NetGraph& graph, DofSet& dof, std::span<const Tensor> inputs) {
  if (inputs.empty()) return {};
  return check_exact(graph, dof, export_dof(graph, dof), inputs);
}

ConformanceReport check_exact(const NetGraph& graph, DofSet& dof, const DeployExport& exp,
                              std::span<const Tensor> inputs) {
  ConformanceReport report;
  if (inputs.empty()) return report;
  for (const DeployLayer& l : exp.layers) {
    report.layers.push_back({l.name, 0, 0});
    report.end_to_end.push_back({l.name, 0, 0});
  }
  std::vector<std::size_t> gidx(exp.layers.size());
  for (std::size_t k = 0; k < exp.layers.size(); ++k) gidx[k] = graph.index(exp.layers[k].name);

  Tape tape;
  tape.set_grad_enabled(false);
  const OfflinePlan plan = build_offline(tape, dof, graph);
  for (const Tensor& raw : inputs) {
    Tensor x = raw;
    if (x.rank() == graph.input_shape().size()) {
      Shape s = x.shape();
      s.insert(s.begin(), 1);
      x = x.reshaped(s);
    }
    report.samples += x.dim(0);
    const std::vector<Var> codes = simulate(tape, graph, dof, plan, tape.constant(x));
    std::vector<IntTensor> sim(exp.layers.size());
    for (std::size_t k = 0; k < exp.layers.size(); ++k) sim[k] = to_int(codes[gidx[k]].value());

    std::vector<const IntTensor*> ins;
    for (std::size_t k = 0; k < exp.layers.size(); ++k) {
      ins.clear();
      if (exp.layers[k].kind == LayerKind::kInput) {
        ins.push_back(&sim[k]);
      } else {
        for (std::size_t p : exp.layers[k].inputs) ins.push_back(&sim[p]);
      }
      add_stats(report.layers, k, run_int_layer(exp, k, ins), sim[k]);
    }
    const std::size_t in_k = exp.index(graph.layer(graph.input_index()).name);
    const std::vector<IntTensor> full = run_int(exp, sim[in_k]);
    for (std::size_t k = 0; k < exp.layers.size(); ++k) add_stats(report.end_to_end, k, full[k], sim[k]);
  }
  return report;
}

}  // namespace qft
