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
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qft/tensor.hpp"

namespace qft {

/// Operation kinds understood by the tape. Every kind except the rounding
/// ones (kRoundSteClip, kRequantize) has its exact derivative as backward
/// rule; the rounding ones use the straight-through estimator.
enum class OpKind {
  kLeaf,
  kMatmul,
  kConv2d,
  kDepthwiseConv2d,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kRelu,
  kRelu6,
  kAvgpoolGlobal,
  kMaxpool,
  kConcat,
  kReduceSum,
  kL2Norm,
  kLogSoftmax,
  kReciprocal,
  kOuterProduct,
  kRoundSteClip,
  /// Fused recode: clip(round(sum_k x_k * f_k) + zero_point, lo, hi), the
  /// products and sum evaluated in double so the result matches the integer
  /// pipeline exactly.
  kRequantize,
};

std::string_view to_string(OpKind kind);
OpKind op_kind_from_string(std::string_view name);

/// How the second operand of a binary elementwise op maps onto the first.
enum class Broadcast {
  kAuto,     ///< same shape, scalar, or vector along axis 1
  kSame,
  kScalar,
  kChannel,  ///< vector of length shape[axis]
  kLeading,  ///< second shape is a prefix of the first
};

struct OpAttrs {
  Broadcast broadcast = Broadcast::kAuto;
  std::size_t axis = 1;

  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t kernel = 2;
  float pad_value = 0.0f;

  /// kReduceSum: axes kept in the output (empty reduces to a scalar).
  std::vector<std::size_t> keep_axes;

  float qmin = 0.0f;
  float qmax = 0.0f;

  float zero_point = 0.0f;
  Tensor lo;
  Tensor hi;
  bool round = true;
};

/// Persistent trainable leaf: owned outside any tape so it survives across
/// forward/backward passes. `grad` accumulates until zero_grad().
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string name, Tensor value, bool trainable = true);
  void zero_grad();
};

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape& tape() const;
  std::size_t id() const noexcept { return id_; }

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered record of executed ops. One forward/backward at a time; distinct
/// tapes share nothing.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to `param`; backward adds into param.grad when trainable.
  Var parameter(Parameter& param);
  /// Local leaf that requires grad; read it back through Var::grad().
  Var variable(Tensor value);

  Var record(OpKind kind, std::span<const Var> inputs, OpAttrs attrs);

  /// Reverse sweep from a scalar loss. Grads of interior nodes are reset at
  /// the start so repeated calls give identical results.
  void backward(Var loss);

  /// When disabled, new nodes never require grad and keep no saved state.
  void set_grad_enabled(bool enabled) noexcept { grad_enabled_ = enabled; }
  bool grad_enabled() const noexcept { return grad_enabled_; }

  std::size_t size() const noexcept;

  const Tensor& value_of(std::size_t id) const;
  const Tensor& grad_of(std::size_t id) const;

 private:
  struct Node;
  std::vector<Node> nodes_;
  bool grad_enabled_ = true;

  Node& node(std::size_t id);
  void backward_node(std::size_t id);
};

Var forward_op(OpKind kind, std::span<const Var> inputs, const OpAttrs& attrs = {});

Var matmul(Var a, Var b);
/// x: [B, Cin, H, W], w: [Cout, Cin, kh, kw].
Var conv2d(Var x, Var w, std::size_t stride, std::size_t padding, float pad_value = 0.0f);
/// x: [B, C, H, W], w: [C, 1, kh, kw].
Var depthwise_conv2d(Var x, Var w, std::size_t stride, std::size_t padding,
                     float pad_value = 0.0f);
Var add(Var a, Var b, Broadcast mode = Broadcast::kAuto, std::size_t axis = 1);
Var sub(Var a, Var b, Broadcast mode = Broadcast::kAuto, std::size_t axis = 1);
Var mul(Var a, Var b, Broadcast mode = Broadcast::kAuto, std::size_t axis = 1);
Var div(Var a, Var b, Broadcast mode = Broadcast::kAuto, std::size_t axis = 1);
Var relu(Var x);
Var relu6(Var x);
/// [B, C, H, W] -> [B, C] mean over spatial positions.
Var avgpool_global(Var x);
Var maxpool(Var x, std::size_t kernel, std::size_t stride);
Var concat(std::span<const Var> xs, std::size_t axis);
Var reduce_sum(Var x, std::vector<std::size_t> keep_axes = {});
Var l2_norm(Var x);
/// Along the last axis of a rank-2 tensor.
Var log_softmax(Var x);
Var reciprocal(Var x);
/// a: [M], b: [N] -> [M, N].
Var outer_product(Var a, Var b);
Var round_ste_clip(Var x, float qmin, float qmax);
/// See OpKind::kRequantize. xs share one shape [B, C, ...]; each f is a
/// vector of length C or 1; lo/hi likewise.
Var requantize(std::span<const Var> xs, std::span<const Var> fs, float zero_point, Tensor lo,
               Tensor hi, bool round = true);

}  // namespace qft
