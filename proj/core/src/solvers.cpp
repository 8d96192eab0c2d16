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

#include "qft/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>

#include "qft/error.hpp"
#include "qft/graph.hpp"

namespace qft {

namespace {

inline float code_of(float x, float s, float qmin, float qmax) {
  return std::clamp(round_half_away(x / s), qmin, qmax);
}

void require_positive(float s, const char* what) {
  require(s > 0.0f && std::isfinite(s), ErrorCode::kNonPositiveScale,
          std::string(what) + " must be positive and finite, got " + std::to_string(s));
}

// Exact minimizer of sum (x - s q(s))^2 over s > 0: q(s) is piecewise
// constant between the rounding breakpoints |x_i| / (k - 0.5) and the error
// is continuous across them, so the minimum is the projection optimum of
// one interval, clamped to that interval.
float sweep_seed(std::span<const float> x, const QuantSpec& q) {
  struct Event {
    double s;
    double a;
    double k;
  };
  const double qmin = q.qmin(), qmax = q.qmax();
  std::vector<Event> events;
  double sx2 = 0.0;
  for (float v : x) {
    const double a = std::fabs(static_cast<double>(v));
    sx2 += a * a;
    if (a == 0.0) continue;
    const double limit = v > 0 ? qmax : -qmin;
    for (double k = 1; k <= limit; k += 1) events.push_back({a / (k - 0.5), a, k});
  }
  if (events.empty()) return 0.0f;
  std::sort(events.begin(), events.end(), [](const Event& l, const Event& r) {
    if (l.s != r.s) return l.s > r.s;
    return l.a < r.a;
  });
  double xq = 0.0, qq = 0.0;
  double best_s = events.front().s, best_e = sx2;
  std::size_t e = 0;
  while (e < events.size()) {
    const double hi = events[e].s;
    while (e < events.size() && events[e].s == hi) {
      xq += events[e].a;
      qq += 2.0 * events[e].k - 1.0;
      ++e;
    }
    const double lo = e < events.size() ? events[e].s : 0.0;
    const double s = std::clamp(xq / qq, lo, hi);
    if (s <= 0.0) continue;
    const double err = sx2 - 2.0 * s * xq + s * s * qq;
    if (err < best_e) {
      best_e = err;
      best_s = s;
    }
  }
  return static_cast<float>(best_s);
}

}  // namespace

float QuantSpec::qmin() const {
  require(bits >= 2 && bits <= 24, ErrorCode::kInvalidArgument, "bits must be in [2, 24]");
  return is_signed ? -(std::ldexp(1.0f, bits - 1) - 1.0f) : 0.0f;
}

float QuantSpec::qmax() const {
  require(bits >= 2 && bits <= 24, ErrorCode::kInvalidArgument, "bits must be in [2, 24]");
  return is_signed ? std::ldexp(1.0f, bits - 1) - 1.0f : std::ldexp(1.0f, bits) - 1.0f;
}

KernelView matrix_view(const Shape& shape) {
  require(shape.size() == 2, ErrorCode::kShapeMismatch, "expected a matrix, got " + shape_str(shape));
  return KernelView{shape[0], shape[1], 1, false};
}

KernelView conv_view(const Shape& shape) {
  require(shape.size() == 4, ErrorCode::kShapeMismatch,
          "expected a rank-4 kernel, got " + shape_str(shape));
  return KernelView{shape[1], shape[0], shape[2] * shape[3], true};
}

Tensor fakequant(const Tensor& x, float s, const QuantSpec& q, float zero_point) {
  require_positive(s, "scale");
  const float qmin = q.qmin(), qmax = q.qmax();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    y[i] = s * (std::clamp(round_half_away(x[i] / s) + zero_point, qmin, qmax) - zero_point);
  }
  return y;
}

Tensor fakequant(const Tensor& x, std::span<const float> s, std::size_t axis, const QuantSpec& q,
                 float zero_point) {
  require(axis < x.rank() && s.size() == x.dim(axis), ErrorCode::kShapeMismatch,
          "scale vector does not match axis " + std::to_string(axis) + " of " +
              shape_str(x.shape()));
  for (float v : s) require_positive(v, "scale");
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  const float qmin = q.qmin(), qmax = q.qmax();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const float si = s[(i / inner) % s.size()];
    y[i] = si * (std::clamp(round_half_away(x[i] / si) + zero_point, qmin, qmax) - zero_point);
  }
  return y;
}

Tensor fakequant(const Tensor& x, const DualScale& s, const KernelView& v, const QuantSpec& q) {
  require(v.numel() == x.numel() && s.left.size() == v.m && s.right.size() == v.n,
          ErrorCode::kShapeMismatch, "dual scale does not match kernel " + shape_str(x.shape()));
  for (float l : s.left) require_positive(l, "left scale");
  for (float r : s.right) require_positive(r, "right scale");
  const float qmin = q.qmin(), qmax = q.qmax();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < v.m; ++i) {
    for (std::size_t j = 0; j < v.n; ++j) {
      const float sij = s.left[i] * s.right[j];
      for (std::size_t t = 0; t < v.taps; ++t) {
        const std::size_t k = v.index(i, j, t);
        y[k] = sij * code_of(x[k], sij, qmin, qmax);
      }
    }
  }
  return y;
}

double quant_mse(std::span<const float> x, float s, const QuantSpec& q) {
  const float qmin = q.qmin(), qmax = q.qmax();
  double err = 0.0;
  for (float v : x) {
    const double d = static_cast<double>(v) - static_cast<double>(s) * code_of(v, s, qmin, qmax);
    err += d * d;
  }
  return x.empty() ? 0.0 : err / static_cast<double>(x.size());
}

PpqResult ppq(std::span<const float> x, const QuantSpec& q, int iterations, PpqSeeding seeding) {
  require(iterations >= 1, ErrorCode::kInvalidArgument, "ppq needs iterations >= 1");
  float amax = 0.0f;
  for (float v : x) amax = std::max(amax, std::fabs(v));
  require(amax > 0.0f, ErrorCode::kDegenerateSlice, "ppq on an all-zero input");
  const float qmin = q.qmin(), qmax = q.qmax();

  PpqResult r;
  r.scale = amax / qmax;
  if (seeding == PpqSeeding::kSweep) {
    const float seed = sweep_seed(x, q);
    if (seed > 0.0f) r.scale = seed;
  }
  r.mse = quant_mse(x, r.scale, q);
  for (int it = 0; it < iterations; ++it) {
    double xq = 0.0, qq = 0.0;
    for (float v : x) {
      const double c = code_of(v, r.scale, qmin, qmax);
      xq += c * v;
      qq += c * c;
    }
    if (qq == 0.0) break;
    const float s = static_cast<float>(xq / qq);
    if (!(s > 0.0f)) break;
    const double mse = quant_mse(x, s, q);
    if (mse > r.mse) break;
    const double rel = std::fabs(static_cast<double>(s) - r.scale) / r.scale;
    r.scale = s;
    r.mse = mse;
    r.iterations = it + 1;
    if (rel < 1e-7) break;
  }
  return r;
}

double dual_mse(const Tensor& w, const KernelView& v, const DualScale& s, const QuantSpec& q) {
  const float qmin = q.qmin(), qmax = q.qmax();
  double err = 0.0;
  for (std::size_t i = 0; i < v.m; ++i) {
    for (std::size_t j = 0; j < v.n; ++j) {
      const float sij = s.left[i] * s.right[j];
      for (std::size_t t = 0; t < v.taps; ++t) {
        const float x = w[v.index(i, j, t)];
        const double d = static_cast<double>(x) - static_cast<double>(sij) *
                                                      code_of(x, sij, qmin, qmax);
        err += d * d;
      }
    }
  }
  return err / static_cast<double>(v.numel());
}

namespace {

// Column-ratio voting: when W = diag(a) M diag(b) with integer M, every row
// with nonzero entries in columns j and ref proposes b_j / b_ref among
// |W_ij / W_iref| * p / r for codes p, r, and the true ratio collects a vote
// from each such row. Row scales then follow from scalar MMSE on W / T.
// Returns nothing when the code range makes the candidate set too large.
std::optional<DualScale> ratio_vote_seed(const Tensor& w, const KernelView& v, const QuantSpec& q) {
  const int top = static_cast<int>(std::max(q.qmax(), -q.qmin()));
  std::vector<double> ratios;
  for (int p = 1; p <= top; ++p) {
    for (int r = 1; r <= top; ++r) ratios.push_back(std::log(static_cast<double>(p) / r));
  }
  std::sort(ratios.begin(), ratios.end());
  ratios.erase(std::unique(ratios.begin(), ratios.end(),
                           [](double x, double y) { return std::fabs(x - y) < 1e-12; }),
               ratios.end());
  const std::size_t rows = v.m * v.taps;
  if (rows * ratios.size() > (1u << 18)) return std::nullopt;

  auto at = [&](std::size_t row, std::size_t j) {
    return std::fabs(static_cast<double>(w[v.index(row / v.taps, j, row % v.taps)]));
  };
  std::size_t ref = 0, ref_count = 0;
  for (std::size_t j = 0; j < v.n; ++j) {
    std::size_t cnt = 0;
    for (std::size_t row = 0; row < rows; ++row) cnt += at(row, j) > 0.0 ? 1 : 0;
    if (cnt > ref_count) {
      ref = j;
      ref_count = cnt;
    }
  }

  constexpr double kTol = 1e-5;
  DualScale s;
  s.right.assign(v.n, 1.0f);
  // Every window that ties for the most rows; small kernels admit several.
  std::vector<std::vector<float>> tied(v.n);
  std::vector<std::pair<double, std::size_t>> cand;
  std::vector<std::size_t> hits(rows, 0);
  for (std::size_t j = 0; j < v.n; ++j) {
    if (j == ref) {
      tied[j] = {1.0f};
      continue;
    }
    cand.clear();
    for (std::size_t row = 0; row < rows; ++row) {
      const double x = at(row, j), y = at(row, ref);
      if (x == 0.0 || y == 0.0) continue;
      const double base = std::log(x / y);
      for (double r : ratios) cand.emplace_back(base + r, row);
    }
    if (cand.empty()) return std::nullopt;
    std::sort(cand.begin(), cand.end());
    std::fill(hits.begin(), hits.end(), 0);
    std::size_t lo = 0, distinct = 0, best = 0;
    std::vector<double> at_best;
    for (std::size_t k = 0; k < cand.size(); ++k) {
      if (hits[cand[k].second]++ == 0) ++distinct;
      while (cand[k].first - cand[lo].first > kTol) {
        if (--hits[cand[lo].second] == 0) --distinct;
        ++lo;
      }
      if (distinct > best) {
        best = distinct;
        at_best.clear();
      }
      if (distinct == best) {
        const double mid = 0.5 * (cand[lo].first + cand[k].first);
        if (at_best.empty() || mid - at_best.back() > kTol) at_best.push_back(mid);
      }
    }
    for (double a : at_best) tied[j].push_back(static_cast<float>(std::exp(a)));
    s.right[j] = tied[j][0];
  }

  s.left.resize(v.m);
  std::vector<float> row(v.n * v.taps);
  auto fit_rows = [&] {
    for (std::size_t i = 0; i < v.m; ++i) {
      for (std::size_t j = 0; j < v.n; ++j) {
        for (std::size_t t = 0; t < v.taps; ++t) {
          row[j * v.taps + t] = w[v.index(i, j, t)] / s.right[j];
        }
      }
      s.left[i] = ppq(row, q).scale;
    }
  };
  auto column_error = [&](std::size_t j, float right) {
    double e = 0.0;
    for (std::size_t i = 0; i < v.m; ++i) {
      const float sc = s.left[i] * right;
      for (std::size_t t = 0; t < v.taps; ++t) {
        const float x = w[v.index(i, j, t)];
        const float k = std::clamp(round_half_away(x / sc), q.qmin(), q.qmax());
        e += static_cast<double>(x - sc * k) * (x - sc * k);
      }
    }
    return e;
  };
  fit_rows();
  for (int round = 0; round < 4; ++round) {
    bool changed = false;
    for (std::size_t j = 0; j < v.n; ++j) {
      if (tied[j].size() < 2) continue;
      float pick = s.right[j];
      double best_e = column_error(j, pick);
      for (float t : tied[j]) {
        const double e = column_error(j, t);
        if (e < best_e) {
          best_e = e;
          pick = t;
        }
      }
      changed = changed || pick != s.right[j];
      s.right[j] = pick;
    }
    if (!changed) break;
    fit_rows();
  }
  return s;
}

}  // namespace

ApqResult apq(const Tensor& w, const KernelView& v, const QuantSpec& q, int iterations) {
  require(iterations >= 1, ErrorCode::kInvalidArgument, "apq needs iterations >= 1");
  require(v.numel() == w.numel(), ErrorCode::kShapeMismatch, "kernel view does not match tensor");
  const float qmin = q.qmin(), qmax = q.qmax();
  std::vector<float> rmax(v.m, 0.0f), cmax(v.n, 0.0f);
  for (std::size_t i = 0; i < v.m; ++i) {
    for (std::size_t j = 0; j < v.n; ++j) {
      for (std::size_t t = 0; t < v.taps; ++t) {
        const float a = std::fabs(w[v.index(i, j, t)]);
        rmax[i] = std::max(rmax[i], a);
        cmax[j] = std::max(cmax[j], a);
      }
    }
  }
  for (std::size_t i = 0; i < v.m; ++i) {
    require(rmax[i] > 0.0f, ErrorCode::kDegenerateSlice,
            "degenerate slice: input channel " + std::to_string(i) + " is all zero");
  }
  for (std::size_t j = 0; j < v.n; ++j) {
    require(cmax[j] > 0.0f, ErrorCode::kDegenerateSlice,
            "degenerate slice: output channel " + std::to_string(j) + " is all zero");
  }

  // Alternating column/row least-squares steps from a given starting point.
  auto alternate = [&](DualScale start) {
    ApqResult r;
    r.scale = std::move(start);
    r.mse = dual_mse(w, v, r.scale, q);
    std::vector<double> num, den;
    for (int it = 0; it < iterations; ++it) {
      DualScale next = r.scale;
      // Column step on data pre-divided by the row scales.
      num.assign(v.n, 0.0);
      den.assign(v.n, 0.0);
      for (std::size_t i = 0; i < v.m; ++i) {
        for (std::size_t j = 0; j < v.n; ++j) {
          const float sij = next.left[i] * next.right[j];
          for (std::size_t t = 0; t < v.taps; ++t) {
            const float x = w[v.index(i, j, t)];
            const double c = code_of(x, sij, qmin, qmax);
            num[j] += c * (static_cast<double>(x) / next.left[i]);
            den[j] += c * c;
          }
        }
      }
      for (std::size_t j = 0; j < v.n; ++j) {
        if (den[j] > 0.0 && num[j] > 0.0) next.right[j] = static_cast<float>(num[j] / den[j]);
      }
      // Row step on data pre-divided by the new column scales.
      num.assign(v.m, 0.0);
      den.assign(v.m, 0.0);
      for (std::size_t i = 0; i < v.m; ++i) {
        for (std::size_t j = 0; j < v.n; ++j) {
          const float sij = next.left[i] * next.right[j];
          for (std::size_t t = 0; t < v.taps; ++t) {
            const float x = w[v.index(i, j, t)];
            const double c = code_of(x, sij, qmin, qmax);
            num[i] += c * (static_cast<double>(x) / next.right[j]);
            den[i] += c * c;
          }
        }
      }
      for (std::size_t i = 0; i < v.m; ++i) {
        if (den[i] > 0.0 && num[i] > 0.0) next.left[i] = static_cast<float>(num[i] / den[i]);
      }
      const double mse = dual_mse(w, v, next, q);
      if (mse > r.mse) break;
      double change = 0.0;
      for (std::size_t i = 0; i < v.m; ++i) {
        change = std::max(change, std::fabs(static_cast<double>(next.left[i]) - r.scale.left[i]) /
                                      r.scale.left[i]);
      }
      for (std::size_t j = 0; j < v.n; ++j) {
        change = std::max(change, std::fabs(static_cast<double>(next.right[j]) - r.scale.right[j]) /
                                      r.scale.right[j]);
      }
      r.scale = std::move(next);
      r.mse = mse;
      r.alternations = it + 1;
      if (change < 1e-7) break;
    }
    return r;
  };

  DualScale init;
  init.right.resize(v.n);
  init.left.assign(v.m, 0.0f);
  for (std::size_t j = 0; j < v.n; ++j) init.right[j] = cmax[j] / qmax;
  for (std::size_t i = 0; i < v.m; ++i) {
    for (std::size_t j = 0; j < v.n; ++j) {
      for (std::size_t t = 0; t < v.taps; ++t) {
        init.left[i] = std::max(init.left[i], std::fabs(w[v.index(i, j, t)] / init.right[j]));
      }
    }
    init.left[i] /= qmax;
  }
  ApqResult r = alternate(std::move(init));
  auto try_seed = [&](DualScale seed) {
    if (r.mse == 0.0) return;
    for (float s : seed.left) {
      if (!(s > 0.0f && std::isfinite(s))) return;
    }
    for (float s : seed.right) {
      if (!(s > 0.0f && std::isfinite(s))) return;
    }
    ApqResult alt = alternate(std::move(seed));
    if (alt.mse < r.mse) r = std::move(alt);
  };
  if (std::optional<DualScale> seed = ratio_vote_seed(w, v, q)) try_seed(std::move(*seed));
  // The layerwise and output-channelwise solutions are points of the dual
  // family, so starting from them keeps the result no worse than either.
  DualScale flat;
  flat.left.assign(v.m, 1.0f);
  flat.right.assign(v.n, ppq(w.data(), q, iterations).scale);
  try_seed(std::move(flat));
  DualScale cols;
  cols.left.assign(v.m, 1.0f);
  for (const PpqResult& s : slice_ppq(w, v, 1, q, iterations)) cols.right.push_back(s.scale);
  try_seed(std::move(cols));
  return r;
}

ApqResult apq(const Tensor& w, const QuantSpec& q, int iterations) {
  return apq(w, matrix_view(w.shape()), q, iterations);
}

std::vector<PpqResult> slice_ppq(const Tensor& w, const KernelView& v, int axis,
                                 const QuantSpec& q, int iterations) {
  require(axis == 0 || axis == 1, ErrorCode::kInvalidArgument, "slice axis must be 0 or 1");
  require(v.numel() == w.numel(), ErrorCode::kShapeMismatch, "kernel view does not match tensor");
  const std::size_t outer = axis == 1 ? v.n : v.m;
  const std::size_t other = axis == 1 ? v.m : v.n;
  std::vector<PpqResult> out;
  std::vector<float> slice(other * v.taps);
  for (std::size_t s = 0; s < outer; ++s) {
    std::size_t k = 0;
    for (std::size_t o = 0; o < other; ++o) {
      for (std::size_t t = 0; t < v.taps; ++t) {
        slice[k++] = axis == 1 ? w[v.index(o, s, t)] : w[v.index(s, o, t)];
      }
    }
    out.push_back(ppq(slice, q, iterations));
  }
  return out;
}

MmseReport mmse_report(const Tensor& w, const KernelView& v, const QuantSpec& q, int iterations) {
  MmseReport r;
  float amax = 0.0f;
  for (float x : w.data()) amax = std::max(amax, std::fabs(x));
  const PpqResult lw = ppq(w.data(), q, iterations);
  r.layerwise_mse = lw.mse;
  r.layerwise_range_ratio = lw.scale * q.qmax() / amax;

  const std::vector<PpqResult> ch = slice_ppq(w, v, 1, q, iterations);
  double total = 0.0;
  for (std::size_t j = 0; j < v.n; ++j) {
    total += ch[j].mse * static_cast<double>(v.m * v.taps);
    float smax = 0.0f;
    for (std::size_t i = 0; i < v.m; ++i) {
      for (std::size_t t = 0; t < v.taps; ++t) smax = std::max(smax, std::fabs(w[v.index(i, j, t)]));
    }
    r.slice_range_ratio.push_back(ch[j].scale * q.qmax() / smax);
  }
  r.channelwise_mse = total / static_cast<double>(v.numel());
  r.doubly_channelwise_mse = apq(w, v, q, iterations).mse;
  return r;
}

std::map<std::string, ActivationStats> calibrate_activations(const NetGraph& graph,
                                                             std::span<const Tensor> samples) {
  require(!samples.empty(), ErrorCode::kInvalidArgument, "calibration needs at least one sample");
  std::map<std::string, ActivationStats> stats;
  bool first = true;
  for (const Tensor& s : samples) {
    const auto acts = run_fp(graph, s);
    for (const auto& [name, t] : acts) {
      const auto [lo, hi] = std::minmax_element(t.data().begin(), t.data().end());
      ActivationStats& st = stats[name];
      if (first) {
        st = {*lo, *hi};
      } else {
        st.min = std::min(st.min, *lo);
        st.max = std::max(st.max, *hi);
      }
    }
    first = false;
  }
  return stats;
}

}  // namespace qft
