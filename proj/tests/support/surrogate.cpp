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

#include "surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qft::testing {

SurrogateParams SurrogateParams::from(const DofSet& dof) {
  auto cp = [](const Tensor& t) { return std::vector<double>(t.data().begin(), t.data().end()); };
  SurrogateParams p;
  for (const LayerDof& d : dof.layers) {
    p.weight.push_back(cp(d.weight.value));
    p.bias.push_back(cp(d.bias.value));
    p.rescale.push_back(cp(d.rescale.value));
  }
  for (const ActGroup& g : dof.groups) p.scale.push_back(cp(g.scale.value));
  return p;
}

SurrogateLoss::SurrogateLoss(const NetGraph& graph, const DofSet& dof, Tensor input,
                             Tensor teacher_features)
    : graph_(graph), dof_(dof), input_(std::move(input)), teacher_(std::move(teacher_features)) {
  if (dof.hw.parameterization != Parameterization::kActivationScales) {
    throw std::invalid_argument("surrogate supports the activation-scale parameterization only");
  }
}

double SurrogateLoss::record(const SurrogateParams& p) {
  sites_.clear();
  return run(p, true);
}

double SurrogateLoss::operator()(const SurrogateParams& p) const { return run(p, false); }

double SurrogateLoss::round_site(double v, double decide, double lo, double hi,
                                 bool recording) const {
  if (recording) {
    Site s;
    const double r = std::round(decide);
    s.pass = r >= lo && r <= hi;
    s.offset = r - v;
    s.clipped = std::clamp(r, lo, hi);
    sites_.push_back(s);
    return s.clipped;
  }
  const Site& s = sites_.at(cursor_++);
  return s.pass ? v + s.offset : s.clipped;
}

double SurrogateLoss::run(const SurrogateParams& p, bool recording) const {
  cursor_ = 0;
  const QuantSpec a = dof_.hw.activation_spec();
  const std::size_t nl = graph_.layers().size();
  const std::size_t B = input_.dim(0);

  // Offline subgraph.
  struct Offline {
    std::vector<double> w_hat, b_hat, f;
    double z_in = 0.0;
  };
  std::vector<Offline> off(dof_.layers.size());
  if (recording) ratios_.assign(dof_.layers.size(), {});
  for (std::size_t k = 0; k < dof_.layers.size(); ++k) {
    const LayerDof& d = dof_.layers[k];
    const std::size_t i = d.layer;
    const std::size_t prod = graph_.producers(i)[0];
    const std::size_t gin = dof_.group_of(prod);
    const std::size_t gout = dof_.group_of(i);
    const std::vector<double>& s_in = p.scale[gin];
    const std::vector<double>& s_out = p.scale[gout];
    const std::vector<double>& F = p.rescale[k];
    std::vector<double> right(s_out.size());
    std::vector<float> right_f(s_out.size());
    for (std::size_t c = 0; c < right.size(); ++c) {
      const double f = F.size() == 1 ? F[0] : F[c];
      right[c] = s_out[c] * f;
      right_f[c] = static_cast<float>(s_out[c]) * static_cast<float>(f);
    }
    const Shape& ws = d.weight.value.shape();
    const std::vector<double>& W = p.weight[k];
    const double qmax = QuantSpec{d.weight_bits, true}.qmax();
    Offline& o = off[k];
    o.w_hat.resize(W.size());
    o.z_in = layer_zero_point(dof_, prod);
    std::vector<double> colsum(right.size(), 0.0);
    for (std::size_t e = 0; e < W.size(); ++e) {
      std::size_t m = 0, n = 0;
      if (d.kind == LayerKind::kDense) {
        m = e / ws[1];
        n = e % ws[1];
      } else if (d.kind == LayerKind::kConv) {
        n = e / (ws[1] * ws[2] * ws[3]);
        m = (e / (ws[2] * ws[3])) % ws[1];
      } else {
        n = e / (ws[2] * ws[3]);
        m = n;
      }
      const double left = 1.0 / s_in[m];
      const double r = W[e] / (left * right[n]);
      const float rf = static_cast<float>(W[e]) /
                       ((1.0f / static_cast<float>(s_in[m])) * right_f[n]);
      if (recording) ratios_[k].push_back(r);
      o.w_hat[e] = round_site(r, rf, -qmax, qmax, recording);
      colsum[n] += o.w_hat[e];
    }
    o.b_hat.resize(right.size());
    for (std::size_t c = 0; c < right.size(); ++c) {
      const float bf = static_cast<float>(p.bias[k][c]) / right_f[c];
      o.b_hat[c] = round_site(p.bias[k][c] / right[c], bf, -16777216.0, 16777216.0, recording) -
                   o.z_in * colsum[c];
    }
    o.f = F;
  }

  // Online simulation.
  std::vector<std::vector<double>> act(nl);
  std::vector<Shape> shape(nl);
  std::vector<float> lo, hi;
  for (std::size_t i : graph_.topo_order()) {
    const LayerSpec& l = graph_.layer(i);
    const auto& prods = graph_.producers(i);
    if (dof_.fused_away[i] || l.kind == LayerKind::kOutput) {
      act[i] = act[prods[0]];
      shape[i] = shape[prods[0]];
      continue;
    }
    switch (l.kind) {
      case LayerKind::kInput: {
        const ActGroup& g = dof_.groups[dof_.group_of(i)];
        shape[i] = input_.shape();
        const std::size_t C = shape[i][1];
        const std::size_t inner = input_.numel() / (B * C);
        act[i].resize(input_.numel());
        for (std::size_t e = 0; e < input_.numel(); ++e) {
          const std::size_t c = (e / inner) % C;
          const float inv = 1.0f / g.scale.value[c];
          act[i][e] = round_site(static_cast<double>(input_[e]) * inv, a.qmin() - g.zero_point,
                                 a.qmax() - g.zero_point, recording) + g.zero_point;
        }
        break;
      }
      case LayerKind::kConv:
      case LayerKind::kDepthwiseConv:
      case LayerKind::kDense: {
        const std::size_t k = static_cast<std::size_t>(dof_.slot[i]);
        const Offline& o = off[k];
        const std::vector<double>& x = act[prods[0]];
        const Shape& xs = shape[prods[0]];
        const Shape& ws = dof_.layers[k].weight.value.shape();
        std::vector<double> acc;
        if (l.kind == LayerKind::kDense) {
          const std::size_t m = ws[0], n = ws[1];
          shape[i] = {B, n};
          acc.assign(B * n, 0.0);
          for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t j = 0; j < n; ++j) {
              double s = 0.0;
              for (std::size_t q = 0; q < m; ++q) s += x[b * m + q] * o.w_hat[q * n + j];
              acc[b * n + j] = s + o.b_hat[j];
            }
          }
        } else {
          const bool dw = l.kind == LayerKind::kDepthwiseConv;
          const std::size_t C = xs[1], H = xs[2], W = xs[3];
          const std::size_t co = ws[0], kh = ws[2], kw = ws[3];
          const std::size_t st = l.stride, pad = l.padding;
          const std::size_t Ho = (H + 2 * pad - kh) / st + 1, Wo = (W + 2 * pad - kw) / st + 1;
          shape[i] = {B, co, Ho, Wo};
          acc.assign(B * co * Ho * Wo, 0.0);
          for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t oc = 0; oc < co; ++oc) {
              for (std::size_t oy = 0; oy < Ho; ++oy) {
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                  double s = 0.0;
                  const std::size_t c0 = dw ? oc : 0, c1 = dw ? oc + 1 : C;
                  for (std::size_t c = c0; c < c1; ++c) {
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                      for (std::size_t kx = 0; kx < kw; ++kx) {
                        const long iy = static_cast<long>(oy * st + ky) - static_cast<long>(pad);
                        const long ix = static_cast<long>(ox * st + kx) - static_cast<long>(pad);
                        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(H) &&
                                            ix < static_cast<long>(W);
                        const double xv =
                            inside ? x[((b * C + c) * H + static_cast<std::size_t>(iy)) * W +
                                       static_cast<std::size_t>(ix)]
                                   : o.z_in;
                        const std::size_t wi = dw ? (oc * kh + ky) * kw + kx
                                                  : ((oc * C + c) * kh + ky) * kw + kx;
                        s += xv * o.w_hat[wi];
                      }
                    }
                  }
                  acc[((b * co + oc) * Ho + oy) * Wo + ox] = s + o.b_hat[oc];
                }
              }
            }
          }
        }
        const std::size_t g = dof_.group_of(i);
        const double z = dof_.groups[g].zero_point;
        group_bounds(dof_, g, lo, hi);
        const std::size_t C = shape[i][1];
        const std::size_t inner = acc.size() / (B * C);
        act[i].resize(acc.size());
        for (std::size_t e = 0; e < acc.size(); ++e) {
          const std::size_t c = (e / inner) % C;
          const double f = o.f.size() == 1 ? o.f[0] : o.f[c];
          act[i][e] = round_site(acc[e] * f, lo[c] - z, hi[c] - z, recording) + z;
        }
        break;
      }
      case LayerKind::kAvgpoolGlobal: {
        const std::vector<double>& x = act[prods[0]];
        const Shape& xs = shape[prods[0]];
        const double z = layer_zero_point(dof_, i);
        const std::size_t C = xs[1], hw = xs[2] * xs[3];
        const double f = static_cast<double>(1.0f / static_cast<float>(hw));
        shape[i] = {B, C};
        act[i].resize(B * C);
        for (std::size_t bc = 0; bc < B * C; ++bc) {
          double s = 0.0;
          for (std::size_t t = 0; t < hw; ++t) s += x[bc * hw + t] - z;
          act[i][bc] = round_site(s * f, a.qmin() - z, a.qmax() - z, recording) + z;
        }
        break;
      }
      default:
        throw std::invalid_argument("surrogate does not support layer '" + l.name + "'");
    }
  }

  const std::size_t fi = graph_.feature_index();
  const std::size_t g = dof_.group_of(fi);
  const double z = dof_.groups[g].zero_point;
  const std::vector<double>& s = act[fi];
  const std::size_t C = shape[fi][1];
  const std::size_t inner = s.size() / (B * C);
  double num = 0.0, den = 0.0;
  for (std::size_t e = 0; e < s.size(); ++e) {
    const std::size_t c = (e / inner) % C;
    const double t = teacher_[e];
    const double d = p.scale[g][c] * (s[e] - z) - t;
    num += d * d;
    den += t * t;
  }
  return num / den;
}

}  // namespace qft::testing
