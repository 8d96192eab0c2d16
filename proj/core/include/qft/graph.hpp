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
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qft/autodiff.hpp"
#include "qft/tensor.hpp"

namespace qft {

enum class LayerKind {
  kInput,
  kOutput,
  kConv,
  kDense,
  kDepthwiseConv,
  kEwAdd,
  kRelu,
  kRelu6,
  kAvgpoolGlobal,
  kMaxpool,
  kConcat,
  kBatchnorm,
};

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

/// conv, dense and depthwise_conv carry weights.
bool is_weighted(LayerKind kind);
/// relu6 is the only activation that does not commute with positive scaling.
bool is_homogeneous(LayerKind kind);

struct BnParams {
  std::vector<float> mean;
  std::vector<float> variance;
  std::vector<float> gamma;
  std::vector<float> beta;
  float epsilon = 1e-5f;
};

/// Weight layouts: conv [Cout, Cin, kh, kw], depthwise [C, 1, kh, kw],
/// dense [in, out]. Weighted layers always carry a bias of length Cout
/// (zeros when the file omits it).
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::kInput;
  Tensor weights;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t padding = 0;
  /// maxpool window; stride above applies to it as well.
  std::size_t kernel = 2;
  std::optional<BnParams> bn;

  /// Output channels of a weighted layer.
  std::size_t out_channels() const;
  std::size_t in_channels() const;
};

class NetGraph {
 public:
  NetGraph() = default;
  NetGraph(std::vector<LayerSpec> layers, std::vector<std::pair<std::string, std::string>> edges,
           Shape input_shape, std::string feature_layer = {});

  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  const std::vector<std::pair<std::string, std::string>>& edges() const noexcept { return edges_; }
  /// Per-sample input shape: [C, H, W] or [D].
  const Shape& input_shape() const noexcept { return input_shape_; }

  std::size_t index(std::string_view name) const;
  bool contains(std::string_view name) const;
  const LayerSpec& layer(std::string_view name) const { return layers_[index(name)]; }
  const LayerSpec& layer(std::size_t i) const { return layers_.at(i); }
  LayerSpec& mutable_layer(std::size_t i) { return layers_.at(i); }

  /// Producer / consumer lists in edge declaration order.
  const std::vector<std::size_t>& producers(std::size_t i) const { return producers_.at(i); }
  const std::vector<std::size_t>& consumers(std::size_t i) const { return consumers_.at(i); }

  /// Stable topological order, ties broken by declaration order.
  const std::vector<std::size_t>& topo_order() const noexcept { return topo_; }
  /// Per-sample output shape of every layer.
  const Shape& out_shape(std::size_t i) const { return shapes_.at(i); }

  std::size_t input_index() const noexcept { return input_; }
  /// Explicit feature layer, else the producer of the first global avgpool,
  /// else the last layer in topological order.
  std::size_t feature_index() const noexcept { return feature_; }
  const std::string& feature_layer_attr() const noexcept { return feature_attr_; }

  std::vector<std::size_t> weighted_layers() const;

 private:
  std::vector<LayerSpec> layers_;
  std::vector<std::pair<std::string, std::string>> edges_;
  Shape input_shape_;
  std::string feature_attr_;

  std::map<std::string, std::size_t, std::less<>> by_name_;
  std::vector<std::vector<std::size_t>> producers_;
  std::vector<std::vector<std::size_t>> consumers_;
  std::vector<std::size_t> topo_;
  std::vector<Shape> shapes_;
  std::size_t input_ = 0;
  std::size_t feature_ = 0;

  void build();
};

NetGraph load_graph(const std::string& path);
/// With `sidecar`, weight payloads go to `<path>.bin` (little-endian float32)
/// and the JSON keeps offsets into it.
void save_graph(const NetGraph& graph, const std::string& path, bool sidecar = false);
NetGraph graph_from_json(const std::string& text, const std::string& base_dir = {});
std::string graph_to_json(const NetGraph& graph);

/// Structural and bit-level equality.
bool graphs_equal(const NetGraph& a, const NetGraph& b);

NetGraph fold_batchnorm(const NetGraph& graph);

std::set<std::string> select_8b_layers(const NetGraph& graph);

std::vector<std::string> fanout(const NetGraph& graph, std::string_view layer);
std::vector<std::string> producers(const NetGraph& graph, std::string_view layer);

/// Supplies the weight (bias=false) or bias (bias=true) Var of a weighted layer.
using ParamSource = std::function<Var(std::size_t layer, bool bias)>;

/// Records the full-precision forward of every layer on `tape`; the returned
/// vector is indexed by layer. `input` is batched: [B, ...input_shape].
std::vector<Var> fp_forward(Tape& tape, const NetGraph& graph, Var input,
                            const ParamSource& params = {});

/// Per-layer FP activations (teacher path), keyed by layer name.
std::map<std::string, Tensor> run_fp(const NetGraph& graph, const Tensor& input);

/// Single-layer FP output; used by run_fp and evaluation helpers.
Tensor run_fp_layer(const NetGraph& graph, const Tensor& input, std::size_t layer);

}  // namespace qft
