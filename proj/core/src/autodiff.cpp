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

#include "qft/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <utility>

#include "kernels.hpp"
#include "qft/error.hpp"

namespace qft {

namespace {

constexpr std::array<std::pair<OpKind, std::string_view>, 20> kOpNames{{
    {OpKind::kLeaf, "leaf"},
    {OpKind::kMatmul, "matmul"},
    {OpKind::kConv2d, "conv2d"},
    {OpKind::kDepthwiseConv2d, "depthwise_conv2d"},
    {OpKind::kAdd, "add"},
    {OpKind::kSub, "sub"},
    {OpKind::kMul, "mul"},
    {OpKind::kDiv, "div"},
    {OpKind::kRelu, "relu"},
    {OpKind::kRelu6, "relu6"},
    {OpKind::kAvgpoolGlobal, "avgpool_global"},
    {OpKind::kMaxpool, "maxpool"},
    {OpKind::kConcat, "concat"},
    {OpKind::kReduceSum, "reduce_sum"},
    {OpKind::kL2Norm, "l2_norm"},
    {OpKind::kLogSoftmax, "log_softmax"},
    {OpKind::kReciprocal, "reciprocal"},
    {OpKind::kOuterProduct, "outer_product"},
    {OpKind::kRoundSteClip, "round_ste_clip"},
    {OpKind::kRequantize, "requantize"},
}};

// Index of the broadcast operand for each element of the full operand.
struct BroadcastMap {
  Broadcast mode = Broadcast::kSame;
  std::size_t inner = 1;
  std::size_t channels = 1;

  std::size_t operator()(std::size_t i) const {
    switch (mode) {
      case Broadcast::kScalar: return 0;
      case Broadcast::kChannel: return (i / inner) % channels;
      case Broadcast::kLeading: return i / inner;
      default: return i;
    }
  }
};

std::size_t inner_size(const Shape& s, std::size_t from) {
  std::size_t n = 1;
  for (std::size_t i = from; i < s.size(); ++i) n *= s[i];
  return n;
}

BroadcastMap resolve_broadcast(const Shape& a, const Shape& b, Broadcast mode, std::size_t axis) {
  const std::string ctx = " (" + shape_str(a) + " vs " + shape_str(b) + ")";
  BroadcastMap m;
  if (mode == Broadcast::kAuto) {
    if (a == b) {
      mode = Broadcast::kSame;
    } else if (shape_numel(b) == 1) {
      mode = Broadcast::kScalar;
    } else if (b.size() == 1 && a.size() > axis && a[axis] == b[0]) {
      mode = Broadcast::kChannel;
    } else {
      fail(ErrorCode::kShapeMismatch, "incompatible operand shapes" + ctx);
    }
  }
  m.mode = mode;
  switch (mode) {
    case Broadcast::kSame:
      require(a == b, ErrorCode::kShapeMismatch, "shapes differ" + ctx);
      break;
    case Broadcast::kScalar:
      require(shape_numel(b) == 1, ErrorCode::kShapeMismatch, "expected scalar operand" + ctx);
      break;
    case Broadcast::kChannel:
      require(b.size() == 1 && axis < a.size() && a[axis] == b[0], ErrorCode::kShapeMismatch,
              "expected per-channel vector along axis " + std::to_string(axis) + ctx);
      m.inner = inner_size(a, axis + 1);
      m.channels = b[0];
      break;
    case Broadcast::kLeading:
      require(b.size() <= a.size() && std::equal(b.begin(), b.end(), a.begin()),
              ErrorCode::kShapeMismatch, "expected leading-prefix operand" + ctx);
      m.inner = inner_size(a, b.size());
      break;
    case Broadcast::kAuto: break;
  }
  return m;
}

std::size_t require_arity(OpKind kind, std::span<const Var> inputs, std::size_t n) {
  require(inputs.size() == n, ErrorCode::kInvalidArgument,
          std::string(to_string(kind)) + " expects " + std::to_string(n) + " inputs, got " +
              std::to_string(inputs.size()));
  return n;
}

float bound_at(const Tensor& t, std::size_t c, float fallback) {
  if (t.empty()) return fallback;
  return t.numel() == 1 ? t[0] : t[c];
}

}  // namespace

std::string_view to_string(OpKind kind) {
  for (const auto& [k, name] : kOpNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

OpKind op_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kOpNames) {
    if (n == name) return k;
  }
  fail(ErrorCode::kUnknownOp, "unknown op kind '" + std::string(name) + "'");
}

Parameter::Parameter(std::string n, Tensor v, bool t)
    : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(t) {}

void Parameter::zero_grad() {
  if (grad.shape() != value.shape()) {
    grad = Tensor(value.shape());
  } else {
    grad.fill(0.0f);
  }
}

struct Tape::Node {
  OpKind kind = OpKind::kLeaf;
  std::vector<std::size_t> inputs;
  Tensor value;
  Tensor grad;
  OpAttrs attrs;
  Parameter* param = nullptr;
  bool requires_grad = false;
  bool local_leaf = false;
  BroadcastMap bmap;
  kernels::ConvGeom geom;
  std::vector<float> saved;
  std::vector<std::size_t> saved_index;
};

Tape::Tape() = default;
Tape::~Tape() = default;

Tape& Var::tape() const {
  require(tape_ != nullptr, ErrorCode::kInvalidArgument, "use of unbound Var");
  return *tape_;
}

const Tensor& Var::value() const { return tape().value_of(id_); }
const Tensor& Var::grad() const { return tape().grad_of(id_); }

std::size_t Tape::size() const noexcept { return nodes_.size(); }

Tape::Node& Tape::node(std::size_t id) {
  require(id < nodes_.size(), ErrorCode::kInvalidArgument, "Var id out of range");
  return nodes_[id];
}

const Tensor& Tape::value_of(std::size_t id) const {
  require(id < nodes_.size(), ErrorCode::kInvalidArgument, "Var id out of range");
  return nodes_[id].value;
}

const Tensor& Tape::grad_of(std::size_t id) const {
  require(id < nodes_.size(), ErrorCode::kInvalidArgument, "Var id out of range");
  return nodes_[id].grad;
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& param) {
  Node n;
  n.value = param.value;
  n.param = &param;
  n.requires_grad = grad_enabled_ && param.trainable;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_;
  n.local_leaf = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(OpKind kind, std::span<const Var> inputs, OpAttrs attrs) {
  for (const Var& v : inputs) {
    require(v.valid() && &v.tape() == this, ErrorCode::kInvalidArgument,
            std::string(to_string(kind)) + ": input Var belongs to a different tape");
  }
  Node n;
  n.kind = kind;
  n.attrs = std::move(attrs);
  for (const Var& v : inputs) n.inputs.push_back(v.id());
  bool any_grad = false;
  for (const Var& v : inputs) any_grad = any_grad || nodes_[v.id()].requires_grad;
  n.requires_grad = grad_enabled_ && any_grad;

  auto in = [&](std::size_t i) -> const Tensor& { return nodes_[n.inputs[i]].value; };
  const OpAttrs& at = n.attrs;

  switch (kind) {
    case OpKind::kLeaf:
      fail(ErrorCode::kUnknownOp, "leaf nodes are created with constant()/parameter()/variable()");

    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul:
    case OpKind::kDiv: {
      require_arity(kind, inputs, 2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      n.bmap = resolve_broadcast(a.shape(), b.shape(), at.broadcast, at.axis);
      Tensor y(a.shape());
      const std::size_t N = a.numel();
      for (std::size_t i = 0; i < N; ++i) {
        const float bv = b[n.bmap(i)];
        switch (kind) {
          case OpKind::kAdd: y[i] = a[i] + bv; break;
          case OpKind::kSub: y[i] = a[i] - bv; break;
          case OpKind::kMul: y[i] = a[i] * bv; break;
          default: y[i] = a[i] / bv; break;
        }
      }
      n.value = std::move(y);
      break;
    }

    case OpKind::kMatmul: {
      require_arity(kind, inputs, 2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0), ErrorCode::kShapeMismatch,
              "matmul shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
      Tensor y(Shape{a.dim(0), b.dim(1)});
      kernels::matmul(a.data().data(), b.data().data(), y.data().data(), a.dim(0), a.dim(1),
                      b.dim(1));
      n.value = std::move(y);
      break;
    }

    case OpKind::kConv2d: {
      require_arity(kind, inputs, 2);
      n.geom = kernels::conv_geom(in(0).shape(), in(1).shape(), at.stride, at.padding, false);
      const auto& g = n.geom;
      Tensor y(Shape{g.batch, g.cout, g.ho, g.wo});
      kernels::conv2d_forward(g, in(0).data().data(), in(1).data().data(), at.pad_value,
                              y.data().data(), n.saved);
      if (!n.requires_grad) {
        n.saved.clear();
        n.saved.shrink_to_fit();
      }
      n.value = std::move(y);
      break;
    }

    case OpKind::kDepthwiseConv2d: {
      require_arity(kind, inputs, 2);
      n.geom = kernels::conv_geom(in(0).shape(), in(1).shape(), at.stride, at.padding, true);
      const auto& g = n.geom;
      Tensor y(Shape{g.batch, g.cin, g.ho, g.wo});
      kernels::depthwise_forward(g, in(0).data().data(), in(1).data().data(), at.pad_value,
                                 y.data().data());
      n.value = std::move(y);
      break;
    }

    case OpKind::kRelu:
    case OpKind::kRelu6: {
      require_arity(kind, inputs, 1);
      Tensor y = in(0);
      for (float& v : y.data()) {
        v = std::max(v, 0.0f);
        if (kind == OpKind::kRelu6) v = std::min(v, 6.0f);
      }
      n.value = std::move(y);
      break;
    }

    case OpKind::kAvgpoolGlobal: {
      require_arity(kind, inputs, 1);
      const Tensor& x = in(0);
      require(x.rank() == 4, ErrorCode::kShapeMismatch,
              "avgpool_global expects [B,C,H,W], got " + shape_str(x.shape()));
      const std::size_t hw = x.dim(2) * x.dim(3);
      Tensor y(Shape{x.dim(0), x.dim(1)});
      for (std::size_t j = 0; j < y.numel(); ++j) {
        float s = 0.0f;
        for (std::size_t p = 0; p < hw; ++p) s += x[j * hw + p];
        y[j] = s / static_cast<float>(hw);
      }
      n.value = std::move(y);
      break;
    }

    case OpKind::kMaxpool: {
      require_arity(kind, inputs, 1);
      const Tensor& x = in(0);
      require(x.rank() == 4, ErrorCode::kShapeMismatch,
              "maxpool expects [B,C,H,W], got " + shape_str(x.shape()));
      const std::size_t k = at.kernel, s = at.stride;
      require(k >= 1 && s >= 1 && x.dim(2) >= k && x.dim(3) >= k, ErrorCode::kShapeMismatch,
              "maxpool window does not fit input " + shape_str(x.shape()));
      const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
      const std::size_t Ho = (H - k) / s + 1, Wo = (W - k) / s + 1;
      Tensor y(Shape{B, C, Ho, Wo});
      n.saved_index.resize(y.numel());
      std::size_t o = 0;
      for (std::size_t bc = 0; bc < B * C; ++bc) {
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          for (std::size_t ox = 0; ox < Wo; ++ox, ++o) {
            std::size_t best = bc * H * W + (oy * s) * W + ox * s;
            for (std::size_t ky = 0; ky < k; ++ky) {
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::size_t idx = bc * H * W + (oy * s + ky) * W + (ox * s + kx);
                if (x[idx] > x[best]) best = idx;
              }
            }
            y[o] = x[best];
            n.saved_index[o] = best;
          }
        }
      }
      n.value = std::move(y);
      break;
    }

    case OpKind::kConcat: {
      require(!inputs.empty(), ErrorCode::kInvalidArgument, "concat needs at least one input");
      const Shape& s0 = in(0).shape();
      require(at.axis < s0.size(), ErrorCode::kShapeMismatch, "concat axis out of range");
      Shape out = s0;
      out[at.axis] = 0;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Shape& si = in(i).shape();
        bool ok = si.size() == s0.size();
        for (std::size_t d = 0; ok && d < si.size(); ++d) ok = d == at.axis || si[d] == s0[d];
        require(ok, ErrorCode::kShapeMismatch,
                "concat operands " + shape_str(s0) + " and " + shape_str(si) + " disagree");
        out[at.axis] += si[at.axis];
      }
      Tensor y(out);
      const std::size_t outer = shape_numel(Shape(s0.begin(), s0.begin() + at.axis));
      const std::size_t inner = inner_size(s0, at.axis + 1);
      std::size_t offset = 0;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Tensor& xi = in(i);
        const std::size_t block = xi.dim(at.axis) * inner;
        for (std::size_t o = 0; o < outer; ++o) {
          std::copy_n(xi.data().data() + o * block, block,
                      y.data().data() + o * out[at.axis] * inner + offset);
        }
        offset += block;
      }
      n.value = std::move(y);
      break;
    }

    case OpKind::kReduceSum: {
      require_arity(kind, inputs, 1);
      const Tensor& x = in(0);
      Shape out;
      for (std::size_t a : at.keep_axes) {
        require(a < x.rank(), ErrorCode::kShapeMismatch, "reduce_sum keep axis out of range");
        out.push_back(x.dim(a));
      }
      if (out.empty()) out = {1};
      // Output index of every input element.
      n.saved_index.resize(x.numel());
      std::vector<std::size_t> in_stride(x.rank()), out_stride(x.rank(), 0);
      for (std::size_t d = 0; d < x.rank(); ++d) in_stride[d] = inner_size(x.shape(), d + 1);
      std::size_t os = 1;
      for (std::size_t j = at.keep_axes.size(); j-- > 0;) {
        out_stride[at.keep_axes[j]] = os;
        os *= x.dim(at.keep_axes[j]);
      }
      Tensor y(out);
      for (std::size_t i = 0; i < x.numel(); ++i) {
        std::size_t j = 0;
        for (std::size_t d = 0; d < x.rank(); ++d) {
          if (out_stride[d]) j += ((i / in_stride[d]) % x.dim(d)) * out_stride[d];
        }
        n.saved_index[i] = j;
        y[j] += x[i];
      }
      n.value = std::move(y);
      break;
    }

    case OpKind::kL2Norm: {
      require_arity(kind, inputs, 1);
      double s = 0.0;
      for (float v : in(0).data()) s += static_cast<double>(v) * v;
      n.value = Tensor::scalar(static_cast<float>(std::sqrt(s)));
      break;
    }

    case OpKind::kLogSoftmax: {
      require_arity(kind, inputs, 1);
      const Tensor& x = in(0);
      require(x.rank() == 2, ErrorCode::kShapeMismatch,
              "log_softmax expects rank 2, got " + shape_str(x.shape()));
      const std::size_t B = x.dim(0), K = x.dim(1);
      Tensor y(x.shape());
      for (std::size_t b = 0; b < B; ++b) {
        const float* row = x.data().data() + b * K;
        const float mx = *std::max_element(row, row + K);
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) s += std::exp(static_cast<double>(row[k] - mx));
        const float lse = mx + static_cast<float>(std::log(s));
        for (std::size_t k = 0; k < K; ++k) y[b * K + k] = row[k] - lse;
      }
      n.value = std::move(y);
      break;
    }

    case OpKind::kReciprocal: {
      require_arity(kind, inputs, 1);
      Tensor y = in(0);
      for (float& v : y.data()) v = 1.0f / v;
      n.value = std::move(y);
      break;
    }

    case OpKind::kOuterProduct: {
      require_arity(kind, inputs, 2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      require(a.rank() == 1 && b.rank() == 1, ErrorCode::kShapeMismatch,
              "outer_product expects two vectors");
      Tensor y(Shape{a.numel(), b.numel()});
      for (std::size_t i = 0; i < a.numel(); ++i) {
        for (std::size_t j = 0; j < b.numel(); ++j) y[i * b.numel() + j] = a[i] * b[j];
      }
      n.value = std::move(y);
      break;
    }

    case OpKind::kRoundSteClip: {
      require_arity(kind, inputs, 1);
      require(at.qmin < at.qmax, ErrorCode::kInvalidArgument, "round_ste_clip needs qmin < qmax");
      const Tensor& x = in(0);
      Tensor y(x.shape());
      n.saved.resize(x.numel());
      for (std::size_t i = 0; i < x.numel(); ++i) {
        const float r = round_half_away(x[i]);
        const bool inside = r >= at.qmin && r <= at.qmax;
        y[i] = std::clamp(r, at.qmin, at.qmax);
        n.saved[i] = inside ? 1.0f : 0.0f;
      }
      n.value = std::move(y);
      break;
    }

    case OpKind::kRequantize: {
      require(!inputs.empty() && inputs.size() % 2 == 0, ErrorCode::kInvalidArgument,
              "requantize expects pairs of (x, f) inputs");
      const std::size_t k = inputs.size() / 2;
      const Shape& s0 = in(0).shape();
      require(s0.size() >= 2, ErrorCode::kShapeMismatch,
              "requantize expects [B, C, ...], got " + shape_str(s0));
      const std::size_t C = s0[1];
      const std::size_t inner = inner_size(s0, 2);
      for (std::size_t j = 0; j < k; ++j) {
        require(in(j).shape() == s0, ErrorCode::kShapeMismatch, "requantize operands differ in shape");
        const std::size_t fn = in(k + j).numel();
        require(fn == 1 || fn == C, ErrorCode::kShapeMismatch,
                "requantize factor must have 1 or " + std::to_string(C) + " entries");
      }
      for (const Tensor* t : {&at.lo, &at.hi}) {
        require(t->empty() || t->numel() == 1 || t->numel() == C, ErrorCode::kShapeMismatch,
                "requantize clip bounds must have 1 or C entries");
      }
      Tensor y(s0);
      n.saved.resize(y.numel());
      const double z = at.zero_point;
      constexpr float inf = std::numeric_limits<float>::infinity();
      for (std::size_t i = 0; i < y.numel(); ++i) {
        const std::size_t c = (i / inner) % C;
        double acc = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
          const Tensor& f = in(k + j);
          acc += static_cast<double>(in(j)[i]) * static_cast<double>(f.numel() == 1 ? f[0] : f[c]);
        }
        const double v = (at.round ? round_half_away(acc) : acc) + z;
        const double lo = bound_at(at.lo, c, -inf);
        const double hi = bound_at(at.hi, c, inf);
        n.saved[i] = (v >= lo && v <= hi) ? 1.0f : 0.0f;
        y[i] = static_cast<float>(std::clamp(v, lo, hi));
      }
      n.value = std::move(y);
      break;
    }
  }
  if (!n.requires_grad && kind != OpKind::kMaxpool && kind != OpKind::kReduceSum) {
    n.saved.clear();
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  require(loss.valid() && &loss.tape() == this, ErrorCode::kInvalidArgument,
          "backward: loss belongs to a different tape");
  Node& ln = node(loss.id());
  require(ln.value.numel() == 1, ErrorCode::kShapeMismatch,
          "backward: loss must be scalar, got " + shape_str(ln.value.shape()));
  for (std::size_t i = 0; i <= loss.id(); ++i) nodes_[i].grad = Tensor();
  if (!ln.requires_grad) return;
  ln.grad = Tensor(ln.value.shape(), 1.0f);
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.kind == OpKind::kLeaf) {
      if (n.param) {
        Parameter& p = *n.param;
        if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
        for (std::size_t i = 0; i < p.grad.numel(); ++i) p.grad[i] += n.grad[i];
      }
      continue;
    }
    backward_node(id);
  }
}

void Tape::backward_node(std::size_t id) {
  Node& n = nodes_[id];
  const Tensor& g = n.grad;
  const OpAttrs& at = n.attrs;

  // Returns the grad buffer of input i, or nullptr if it needs none.
  auto gin = [&](std::size_t i) -> Tensor* {
    Node& p = nodes_[n.inputs[i]];
    if (!p.requires_grad) return nullptr;
    if (p.grad.empty()) p.grad = Tensor(p.value.shape());
    return &p.grad;
  };
  auto in = [&](std::size_t i) -> const Tensor& { return nodes_[n.inputs[i]].value; };

  switch (n.kind) {
    case OpKind::kLeaf: break;

    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul:
    case OpKind::kDiv: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      Tensor* ga = gin(0);
      Tensor* gb = gin(1);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        const std::size_t j = n.bmap(i);
        const float gi = g[i];
        switch (n.kind) {
          case OpKind::kAdd:
            if (ga) (*ga)[i] += gi;
            if (gb) (*gb)[j] += gi;
            break;
          case OpKind::kSub:
            if (ga) (*ga)[i] += gi;
            if (gb) (*gb)[j] -= gi;
            break;
          case OpKind::kMul:
            if (ga) (*ga)[i] += gi * b[j];
            if (gb) (*gb)[j] += gi * a[i];
            break;
          default:
            if (ga) (*ga)[i] += gi / b[j];
            if (gb) (*gb)[j] -= gi * a[i] / (b[j] * b[j]);
            break;
        }
      }
      break;
    }

    case OpKind::kMatmul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      Tensor* ga = gin(0);
      Tensor* gb = gin(1);
      kernels::matmul_backward(a.data().data(), b.data().data(), g.data().data(),
                               ga ? ga->data().data() : nullptr, gb ? gb->data().data() : nullptr,
                               a.dim(0), a.dim(1), b.dim(1));
      break;
    }

    case OpKind::kConv2d: {
      Tensor* gx = gin(0);
      Tensor* gw = gin(1);
      kernels::conv2d_backward(n.geom, n.saved, in(1).data().data(), g.data().data(),
                               gx ? gx->data().data() : nullptr, gw ? gw->data().data() : nullptr);
      break;
    }

    case OpKind::kDepthwiseConv2d: {
      Tensor* gx = gin(0);
      Tensor* gw = gin(1);
      kernels::depthwise_backward(n.geom, in(0).data().data(), in(1).data().data(), at.pad_value,
                                  g.data().data(), gx ? gx->data().data() : nullptr,
                                  gw ? gw->data().data() : nullptr);
      break;
    }

    case OpKind::kRelu:
    case OpKind::kRelu6: {
      Tensor* gx = gin(0);
      if (!gx) break;
      const Tensor& x = in(0);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        const bool pass = x[i] > 0.0f && (n.kind == OpKind::kRelu || x[i] < 6.0f);
        if (pass) (*gx)[i] += g[i];
      }
      break;
    }

    case OpKind::kAvgpoolGlobal: {
      Tensor* gx = gin(0);
      if (!gx) break;
      const Tensor& x = in(0);
      const std::size_t hw = x.dim(2) * x.dim(3);
      const float inv = 1.0f / static_cast<float>(hw);
      for (std::size_t j = 0; j < g.numel(); ++j) {
        for (std::size_t p = 0; p < hw; ++p) (*gx)[j * hw + p] += g[j] * inv;
      }
      break;
    }

    case OpKind::kMaxpool: {
      Tensor* gx = gin(0);
      if (!gx) break;
      for (std::size_t o = 0; o < g.numel(); ++o) (*gx)[n.saved_index[o]] += g[o];
      break;
    }

    case OpKind::kConcat: {
      const Shape& out = n.value.shape();
      const std::size_t outer = shape_numel(Shape(out.begin(), out.begin() + at.axis));
      const std::size_t inner = inner_size(out, at.axis + 1);
      std::size_t offset = 0;
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        const std::size_t block = in(i).dim(at.axis) * inner;
        if (Tensor* gi = gin(i)) {
          for (std::size_t o = 0; o < outer; ++o) {
            const float* src = g.data().data() + o * out[at.axis] * inner + offset;
            float* dst = gi->data().data() + o * block;
            for (std::size_t e = 0; e < block; ++e) dst[e] += src[e];
          }
        }
        offset += block;
      }
      break;
    }

    case OpKind::kReduceSum: {
      Tensor* gx = gin(0);
      if (!gx) break;
      for (std::size_t i = 0; i < gx->numel(); ++i) (*gx)[i] += g[n.saved_index[i]];
      break;
    }

    case OpKind::kL2Norm: {
      Tensor* gx = gin(0);
      if (!gx) break;
      const float norm = n.value[0];
      if (norm == 0.0f) break;
      const Tensor& x = in(0);
      for (std::size_t i = 0; i < x.numel(); ++i) (*gx)[i] += g[0] * x[i] / norm;
      break;
    }

    case OpKind::kLogSoftmax: {
      Tensor* gx = gin(0);
      if (!gx) break;
      const std::size_t B = n.value.dim(0), K = n.value.dim(1);
      for (std::size_t b = 0; b < B; ++b) {
        float gs = 0.0f;
        for (std::size_t k = 0; k < K; ++k) gs += g[b * K + k];
        for (std::size_t k = 0; k < K; ++k) {
          (*gx)[b * K + k] += g[b * K + k] - std::exp(n.value[b * K + k]) * gs;
        }
      }
      break;
    }

    case OpKind::kReciprocal: {
      Tensor* gx = gin(0);
      if (!gx) break;
      const Tensor& x = in(0);
      for (std::size_t i = 0; i < x.numel(); ++i) (*gx)[i] -= g[i] / (x[i] * x[i]);
      break;
    }

    case OpKind::kOuterProduct: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      Tensor* ga = gin(0);
      Tensor* gb = gin(1);
      const std::size_t M = a.numel(), N = b.numel();
      for (std::size_t i = 0; i < M; ++i) {
        for (std::size_t j = 0; j < N; ++j) {
          const float gij = g[i * N + j];
          if (ga) (*ga)[i] += gij * b[j];
          if (gb) (*gb)[j] += gij * a[i];
        }
      }
      break;
    }

    case OpKind::kRoundSteClip: {
      Tensor* gx = gin(0);
      if (!gx) break;
      for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i] * n.saved[i];
      break;
    }

    case OpKind::kRequantize: {
      const std::size_t k = n.inputs.size() / 2;
      const Shape& s0 = n.value.shape();
      const std::size_t C = s0[1];
      const std::size_t inner = inner_size(s0, 2);
      for (std::size_t j = 0; j < k; ++j) {
        Tensor* gx = gin(j);
        Tensor* gf = gin(k + j);
        const Tensor& x = in(j);
        const Tensor& f = in(k + j);
        const bool scalar_f = f.numel() == 1;
        for (std::size_t i = 0; i < g.numel(); ++i) {
          if (n.saved[i] == 0.0f) continue;
          const std::size_t c = (i / inner) % C;
          const std::size_t fc = scalar_f ? 0 : c;
          if (gx) (*gx)[i] += g[i] * f[fc];
          if (gf) (*gf)[fc] += g[i] * x[i];
        }
      }
      break;
    }
  }
}

Var forward_op(OpKind kind, std::span<const Var> inputs, const OpAttrs& attrs) {
  require(!inputs.empty(), ErrorCode::kInvalidArgument, "forward_op needs inputs");
  return inputs[0].tape().record(kind, inputs, attrs);
}

namespace {

Var unary(OpKind kind, Var x, OpAttrs attrs = {}) {
  const std::array<Var, 1> in{x};
  return x.tape().record(kind, in, std::move(attrs));
}

Var binary(OpKind kind, Var a, Var b, OpAttrs attrs = {}) {
  const std::array<Var, 2> in{a, b};
  return a.tape().record(kind, in, std::move(attrs));
}

OpAttrs broadcast_attrs(Broadcast mode, std::size_t axis) {
  OpAttrs at;
  at.broadcast = mode;
  at.axis = axis;
  return at;
}

}  // namespace

Var matmul(Var a, Var b) { return binary(OpKind::kMatmul, a, b); }

Var conv2d(Var x, Var w, std::size_t stride, std::size_t padding, float pad_value) {
  OpAttrs at;
  at.stride = stride;
  at.padding = padding;
  at.pad_value = pad_value;
  return binary(OpKind::kConv2d, x, w, std::move(at));
}

Var depthwise_conv2d(Var x, Var w, std::size_t stride, std::size_t padding, float pad_value) {
  OpAttrs at;
  at.stride = stride;
  at.padding = padding;
  at.pad_value = pad_value;
  return binary(OpKind::kDepthwiseConv2d, x, w, std::move(at));
}

Var add(Var a, Var b, Broadcast mode, std::size_t axis) {
  return binary(OpKind::kAdd, a, b, broadcast_attrs(mode, axis));
}
Var sub(Var a, Var b, Broadcast mode, std::size_t axis) {
  return binary(OpKind::kSub, a, b, broadcast_attrs(mode, axis));
}
Var mul(Var a, Var b, Broadcast mode, std::size_t axis) {
  return binary(OpKind::kMul, a, b, broadcast_attrs(mode, axis));
}
Var div(Var a, Var b, Broadcast mode, std::size_t axis) {
  return binary(OpKind::kDiv, a, b, broadcast_attrs(mode, axis));
}

Var relu(Var x) { return unary(OpKind::kRelu, x); }
Var relu6(Var x) { return unary(OpKind::kRelu6, x); }
Var avgpool_global(Var x) { return unary(OpKind::kAvgpoolGlobal, x); }

Var maxpool(Var x, std::size_t kernel, std::size_t stride) {
  OpAttrs at;
  at.kernel = kernel;
  at.stride = stride;
  return unary(OpKind::kMaxpool, x, std::move(at));
}

Var concat(std::span<const Var> xs, std::size_t axis) {
  require(!xs.empty(), ErrorCode::kInvalidArgument, "concat needs inputs");
  OpAttrs at;
  at.axis = axis;
  return xs[0].tape().record(OpKind::kConcat, xs, std::move(at));
}

Var reduce_sum(Var x, std::vector<std::size_t> keep_axes) {
  OpAttrs at;
  at.keep_axes = std::move(keep_axes);
  return unary(OpKind::kReduceSum, x, std::move(at));
}

Var l2_norm(Var x) { return unary(OpKind::kL2Norm, x); }
Var log_softmax(Var x) { return unary(OpKind::kLogSoftmax, x); }
Var reciprocal(Var x) { return unary(OpKind::kReciprocal, x); }
Var outer_product(Var a, Var b) { return binary(OpKind::kOuterProduct, a, b); }

Var round_ste_clip(Var x, float qmin, float qmax) {
  OpAttrs at;
  at.qmin = qmin;
  at.qmax = qmax;
  return unary(OpKind::kRoundSteClip, x, std::move(at));
}

Var requantize(std::span<const Var> xs, std::span<const Var> fs, float zero_point, Tensor lo,
               Tensor hi, bool round) {
  require(!xs.empty() && xs.size() == fs.size(), ErrorCode::kInvalidArgument,
          "requantize needs one factor per operand");
  std::vector<Var> in(xs.begin(), xs.end());
  in.insert(in.end(), fs.begin(), fs.end());
  OpAttrs at;
  at.zero_point = zero_point;
  at.lo = std::move(lo);
  at.hi = std::move(hi);
  at.round = round;
  return xs[0].tape().record(OpKind::kRequantize, in, std::move(at));
}

}  // namespace qft
