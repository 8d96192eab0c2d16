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

#include "qft/cle.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <utility>

#include <nlohmann/json.hpp>

#include "qft/error.hpp"

namespace qft {

namespace {

struct Interface {
  std::size_t group = 0;
  std::size_t producer = 0;
  std::vector<std::size_t> weighted;
  bool ew_add = false;
  bool eligible = false;
  std::string reason;
};

Interface inspect(const NetGraph& graph, const DofSet& dof, std::size_t g) {
  const ActGroup& grp = dof.groups[g];
  Interface it;
  it.group = g;
  it.producer = grp.layer;
  const LayerSpec& prod = graph.layer(grp.layer);
  if (grp.is_input || !is_weighted(prod.kind)) {
    it.reason = "not produced by a weighted layer";
    return it;
  }
  for (std::size_t m : grp.members) {
    const LayerKind k = graph.layer(m).kind;
    if (k == LayerKind::kRelu6) {
      it.reason = "relu6 at the interface";
      return it;
    }
    if (k == LayerKind::kOutput) {
      it.reason = "interface is a network output";
      return it;
    }
    for (std::size_t c : graph.consumers(m)) {
      if (std::find(grp.members.begin(), grp.members.end(), c) != grp.members.end()) continue;
      const LayerKind ck = graph.layer(c).kind;
      if (is_weighted(ck)) {
        it.weighted.push_back(c);
      } else if (ck == LayerKind::kEwAdd) {
        it.ew_add = true;
      } else {
        it.reason = std::string("consumer of kind ") + std::string(to_string(ck));
        return it;
      }
    }
  }
  if (it.weighted.empty() && !it.ew_add) {
    it.reason = "no consumer";
    return it;
  }
  it.eligible = true;
  return it;
}

// Scalar MMSE scale of each slice along `axis` of the view; 0 marks an
// all-zero slice.
std::vector<float> slice_scales(const Tensor& w, const KernelView& v, int axis,
                                const QuantSpec& q, int iterations) {
  const std::size_t outer = axis == 1 ? v.n : v.m;
  const std::size_t other = axis == 1 ? v.m : v.n;
  std::vector<float> out(outer, 0.0f);
  std::vector<float> slice(other * v.taps);
  for (std::size_t s = 0; s < outer; ++s) {
    std::size_t k = 0;
    bool nonzero = false;
    for (std::size_t o = 0; o < other; ++o) {
      for (std::size_t t = 0; t < v.taps; ++t) {
        slice[k] = axis == 1 ? w[v.index(o, s, t)] : w[v.index(s, o, t)];
        nonzero = nonzero || slice[k] != 0.0f;
        ++k;
      }
    }
    if (nonzero) out[s] = ppq(slice, q, iterations).scale;
  }
  return out;
}

// Input-channel slices of a consumer kernel; depthwise kernels slice by channel.
int input_axis(LayerKind kind) { return kind == LayerKind::kDepthwiseConv ? 1 : 0; }

}  // namespace

std::vector<std::string> cle_interfaces(const NetGraph& graph, const HwConfig& hw) {
  const DofSet dof = analyze_dof(graph, hw);
  std::vector<std::string> out;
  for (std::size_t g = 0; g < dof.groups.size(); ++g) {
    if (!dof.groups[g].frozen && inspect(graph, dof, g).eligible) out.push_back(dof.groups[g].name);
  }
  return out;
}

CleFactors cle_factors_4b(const NetGraph& graph, const HwConfig& hw, const CleOptions& options) {
  const DofSet dof = analyze_dof(graph, hw);
  CleFactors result;
  for (std::size_t g = 0; g < dof.groups.size(); ++g) {
    const ActGroup& grp = dof.groups[g];
    if (grp.frozen) continue;
    const Interface it = inspect(graph, dof, g);
    if (!it.eligible) continue;

    const LayerSpec& prod = graph.layer(it.producer);
    const QuantSpec qp = hw.weight_spec(prod.name);
    const KernelView vp = kernel_view(prod);
    const float sp = ppq(prod.weights.data(), qp, options.ppq_iterations).scale;
    const std::vector<float> wr = slice_scales(prod.weights, vp, 1, qp, options.ppq_iterations);

    float beta = 0.0f;
    if (it.ew_add) {
      beta = 1.0f;
    } else {
      const int bp = hw.weight_bits_for(prod.name);
      const int bc = hw.weight_bits_for(graph.layer(it.weighted[0]).name);
      if (bp < bc) beta = 0.5f;
      if (bp > bc) beta = -0.5f;
    }
    if (auto o = options.beta.find(grp.name); o != options.beta.end()) beta = o->second;

    std::vector<double> second(grp.channels, 0.0);
    std::vector<bool> degenerate(grp.channels, false);
    if (beta != 1.0f) {
      for (std::size_t c : it.weighted) {
        const LayerSpec& cons = graph.layer(c);
        const QuantSpec qc = hw.weight_spec(cons.name);
        const float sc = ppq(cons.weights.data(), qc, options.ppq_iterations).scale;
        const std::vector<float> wl =
            slice_scales(cons.weights, kernel_view(cons), input_axis(cons.kind), qc,
                         options.ppq_iterations);
        for (std::size_t m = 0; m < grp.channels; ++m) {
          if (wl[m] == 0.0f) {
            degenerate[m] = true;
          } else {
            second[m] += std::log(static_cast<double>(wl[m]) / sc);
          }
        }
      }
      for (double& s : second) s /= static_cast<double>(it.weighted.size());
    }

    std::vector<float> c(grp.channels, 1.0f);
    for (std::size_t m = 0; m < grp.channels; ++m) {
      if (wr[m] == 0.0f || degenerate[m]) {
        warn("cle: all-zero kernel slice at channel " + std::to_string(m) + " of '" + grp.name +
             "'; factor set to 1");
        continue;
      }
      const double first = std::log(static_cast<double>(sp) / wr[m]);
      c[m] = static_cast<float>(std::exp(((1.0 + beta) * first + (1.0 - beta) * second[m]) / 2.0));
    }
    result.factors.emplace(grp.name, std::move(c));
    result.beta.emplace(grp.name, beta);
  }
  return result;
}

void apply_cle_as_scales(DofSet& dof, const NetGraph& graph, const CleFactors& factors) {
  require(dof.hw.parameterization == Parameterization::kActivationScales,
          ErrorCode::kInvalidArgument, "CLE-as-scales needs the activation-scale parameterization");
  require(factors.alpha_a > 0.0f && factors.alpha_w > 0.0f, ErrorCode::kNonPositiveScale,
          "alpha factors must be positive");
  for (const auto& [name, c] : factors.factors) {
    const std::size_t g = dof.group_index(name);
    ActGroup& grp = dof.groups[g];
    require(!grp.frozen, ErrorCode::kNonHomogeneous, "non-homogeneous interface at '" + name + "'");
    require(c.size() == grp.channels, ErrorCode::kShapeMismatch,
            "factor vector for '" + name + "' has wrong length");
    for (std::size_t m = 0; m < c.size(); ++m) {
      require(c[m] > 0.0f, ErrorCode::kNonPositiveScale, "CLE factors must be positive");
      grp.scale.value[m] = factors.alpha_a * grp.scale.value[m] / c[m];
    }
    if (dof.slot[grp.layer] < 0) continue;
    LayerDof& prod = dof.layer_dof(grp.layer);
    float alpha_w = factors.alpha_w;
    if (factors.refit_alpha_w) {
      const LayerSpec& l = graph.layer(grp.layer);
      Tensor eq = prod.weight.value;
      const KernelView v = kernel_view(l);
      for (std::size_t i = 0; i < v.m; ++i) {
        for (std::size_t j = 0; j < v.n; ++j) {
          for (std::size_t t = 0; t < v.taps; ++t) eq[v.index(i, j, t)] *= c[j];
        }
      }
      const QuantSpec q = dof.hw.weight_spec(l.name);
      alpha_w *= ppq(eq.data(), q).scale / ppq(prod.weight.value.data(), q).scale;
    }
    for (float& f : prod.rescale.value.data()) f *= alpha_w / factors.alpha_a;
  }
}

void apply_cle_recalibrated(DofSet& dof, const NetGraph& graph, const CleFactors& factors,
                            std::span<const Tensor> calib_samples) {
  require(dof.hw.parameterization == Parameterization::kActivationScales,
          ErrorCode::kInvalidArgument, "CLE-as-scales needs the activation-scale parameterization");
  require(!calib_samples.empty(), ErrorCode::kInvalidArgument,
          "CLE recalibration needs calibration samples");
  std::map<std::size_t, const std::vector<float>*> c_of;
  for (const auto& [name, c] : factors.factors) {
    const std::size_t g = dof.group_index(name);
    const ActGroup& grp = dof.groups[g];
    require(!grp.frozen, ErrorCode::kNonHomogeneous, "non-homogeneous interface at '" + name + "'");
    require(c.size() == grp.channels, ErrorCode::kShapeMismatch,
            "factor vector for '" + name + "' has wrong length");
    for (float v : c) require(v > 0.0f, ErrorCode::kNonPositiveScale, "CLE factors must be positive");
    for (const ActGroup& other : dof.groups) {
      require(&other == &grp || other.zero_point_tie != grp.zero_point_tie,
              ErrorCode::kConflictingConstraints,
              "cannot recalibrate '" + name + "': its zero point is tied to another group");
    }
    c_of[g] = &c;
  }

  // Per-channel FP ranges of each equalized group.
  std::map<std::size_t, std::pair<std::vector<float>, std::vector<float>>> range;
  for (const auto& [g, c] : c_of) {
    range[g] = {std::vector<float>(c->size(), 0.0f), std::vector<float>(c->size(), 0.0f)};
  }
  for (const Tensor& x : calib_samples) {
    const auto acts = run_fp(graph, x);
    for (auto& [g, lohi] : range) {
      const ActGroup& grp = dof.groups[g];
      const std::size_t rep = grp.fused == FusedActivation::kNone ? grp.members[0] : grp.members[1];
      const Tensor& t = acts.at(graph.layer(rep).name);
      const std::size_t C = t.dim(1), inner = t.numel() / (t.dim(0) * C);
      for (std::size_t e = 0; e < t.numel(); ++e) {
        const std::size_t m = (e / inner) % C;
        lohi.first[m] = std::min(lohi.first[m], t[e]);
        lohi.second[m] = std::max(lohi.second[m], t[e]);
      }
    }
  }

  const QuantSpec a = dof.hw.activation_spec();
  std::vector<float> scalar(dof.groups.size());
  for (std::size_t g = 0; g < dof.groups.size(); ++g) scalar[g] = dof.groups[g].scale.value[0];
  for (const auto& [g, c] : c_of) {
    ActGroup& grp = dof.groups[g];
    const auto& [rlo, rhi] = range.at(g);
    float lo = 0.0f, hi = 0.0f;
    for (std::size_t m = 0; m < c->size(); ++m) {
      lo = std::min(lo, rlo[m] * (*c)[m]);
      hi = std::max(hi, rhi[m] * (*c)[m]);
    }
    float s = a.is_signed ? std::max(-lo, hi) / a.qmax() : (hi - lo) / (a.qmax() - a.qmin());
    s = std::max(s, kScaleFloor);
    grp.zero_point = a.is_signed ? 0.0f : std::clamp(round_half_away(-lo / s), a.qmin(), a.qmax());
    scalar[g] = s;
    for (std::size_t m = 0; m < c->size(); ++m) grp.scale.value[m] = s / (*c)[m];
  }

  for (LayerDof& d : dof.layers) {
    const auto& in_segs = dof.out_segments[graph.producers(d.layer)[0]];
    const std::size_t gin = in_segs[0].group, gout = dof.group_of(d.layer);
    const auto ci = c_of.find(gin), co = c_of.find(gout);
    require(in_segs.size() == 1 || ci == c_of.end(), ErrorCode::kInvalidArgument,
            "cannot recalibrate '" + d.name + "': equalized input is concatenated");
    if (ci == c_of.end() && co == c_of.end()) continue;
    const LayerSpec& l = graph.layer(d.layer);
    const KernelView v = kernel_view(l);
    const bool dw = l.kind == LayerKind::kDepthwiseConv;
    Tensor eq = d.weight.value;
    for (std::size_t i = 0; i < v.m; ++i) {
      for (std::size_t j = 0; j < v.n; ++j) {
        const float up = co == c_of.end() ? 1.0f : (*co->second)[j];
        const float down = ci == c_of.end() ? 1.0f : (*ci->second)[dw ? j : i];
        for (std::size_t t = 0; t < v.taps; ++t) eq[v.index(i, j, t)] = eq[v.index(i, j, t)] * up / down;
      }
    }
    const float s_w = ppq(eq.data(), dof.hw.weight_spec(l.name)).scale;
    d.rescale.value.fill(std::max(s_w * scalar[gin] / scalar[gout], kScaleFloor));
  }
}

NetGraph apply_cle_to_weights(const NetGraph& graph, const CleFactors& factors) {
  const DofSet dof = analyze_dof(graph, HwConfig{});
  std::vector<LayerSpec> layers = graph.layers();
  for (const auto& [name, c] : factors.factors) {
    const std::size_t g = dof.group_index(name);
    const Interface it = inspect(graph, dof, g);
    require(it.reason != "relu6 at the interface", ErrorCode::kNonHomogeneous,
            "non-homogeneous interface at '" + name + "'");
    require(it.eligible && !it.ew_add, ErrorCode::kInvalidArgument,
            "cannot pre-condition weights at '" + name + "': " +
                (it.ew_add ? std::string("ew_add consumer") : it.reason));
    require(c.size() == dof.groups[g].channels, ErrorCode::kShapeMismatch,
            "factor vector for '" + name + "' has wrong length");

    LayerSpec& prod = layers[it.producer];
    const KernelView vp = kernel_view(prod);
    for (std::size_t i = 0; i < vp.m; ++i) {
      for (std::size_t j = 0; j < vp.n; ++j) {
        for (std::size_t t = 0; t < vp.taps; ++t) prod.weights[vp.index(i, j, t)] *= c[j];
      }
    }
    for (std::size_t j = 0; j < vp.n; ++j) prod.bias[j] *= c[j];

    for (std::size_t ci : it.weighted) {
      LayerSpec& cons = layers[ci];
      const KernelView vc = kernel_view(cons);
      const bool dw = cons.kind == LayerKind::kDepthwiseConv;
      for (std::size_t i = 0; i < vc.m; ++i) {
        for (std::size_t j = 0; j < vc.n; ++j) {
          const float f = c[dw ? j : i];
          for (std::size_t t = 0; t < vc.taps; ++t) cons.weights[vc.index(i, j, t)] /= f;
        }
      }
    }
  }
  return NetGraph(std::move(layers), graph.edges(), graph.input_shape(),
                  graph.feature_layer_attr());
}

std::string cle_factors_to_json(const CleFactors& f) {
  nlohmann::json j;
  j["factors"] = f.factors;
  j["beta"] = f.beta;
  j["alpha_a"] = f.alpha_a;
  j["alpha_w"] = f.alpha_w;
  j["refit_alpha_w"] = f.refit_alpha_w;
  return j.dump(1);
}

CleFactors cle_factors_from_json(const std::string& text) {
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    CleFactors f;
    f.factors = j.at("factors").get<std::map<std::string, std::vector<float>>>();
    if (j.contains("beta")) f.beta = j.at("beta").get<std::map<std::string, float>>();
    f.alpha_a = j.value("alpha_a", 1.0f);
    f.alpha_w = j.value("alpha_w", 1.0f);
    f.refit_alpha_w = j.value("refit_alpha_w", false);
    return f;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kSchema, std::string("CLE factors schema violation: ") + e.what());
  }
}

}  // namespace qft
