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

#include "qft/graph.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <queue>

#include "qft/error.hpp"

namespace qft {

namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 12> kLayerNames{{
    {LayerKind::kInput, "input"},
    {LayerKind::kOutput, "output"},
    {LayerKind::kConv, "conv"},
    {LayerKind::kDense, "dense"},
    {LayerKind::kDepthwiseConv, "depthwise_conv"},
    {LayerKind::kEwAdd, "ew_add"},
    {LayerKind::kRelu, "relu"},
    {LayerKind::kRelu6, "relu6"},
    {LayerKind::kAvgpoolGlobal, "avgpool_global"},
    {LayerKind::kMaxpool, "maxpool"},
    {LayerKind::kConcat, "concat"},
    {LayerKind::kBatchnorm, "batchnorm"},
}};

std::string layer_ctx(const LayerSpec& l) { return "layer '" + l.name + "'"; }

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (const auto& [k, n] : kLayerNames) {
    if (k == kind) return n;
  }
  return "unknown";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kLayerNames) {
    if (n == name) return k;
  }
  fail(ErrorCode::kUnsupportedLayer, "unsupported layer kind '" + std::string(name) + "'");
}

bool is_weighted(LayerKind kind) {
  return kind == LayerKind::kConv || kind == LayerKind::kDense ||
         kind == LayerKind::kDepthwiseConv;
}

bool is_homogeneous(LayerKind kind) { return kind != LayerKind::kRelu6; }

std::size_t LayerSpec::out_channels() const {
  require(is_weighted(kind), ErrorCode::kInvalidArgument, layer_ctx(*this) + " has no weights");
  return kind == LayerKind::kDense ? weights.dim(1) : weights.dim(0);
}

std::size_t LayerSpec::in_channels() const {
  require(is_weighted(kind), ErrorCode::kInvalidArgument, layer_ctx(*this) + " has no weights");
  switch (kind) {
    case LayerKind::kDense: return weights.dim(0);
    case LayerKind::kDepthwiseConv: return weights.dim(0);
    default: return weights.dim(1);
  }
}

NetGraph::NetGraph(std::vector<LayerSpec> layers,
                   std::vector<std::pair<std::string, std::string>> edges, Shape input_shape,
                   std::string feature_layer)
    : layers_(std::move(layers)),
      edges_(std::move(edges)),
      input_shape_(std::move(input_shape)),
      feature_attr_(std::move(feature_layer)) {
  build();
}

std::size_t NetGraph::index(std::string_view name) const {
  auto it = by_name_.find(name);
  require(it != by_name_.end(), ErrorCode::kNotFound, "unknown layer '" + std::string(name) + "'");
  return it->second;
}

bool NetGraph::contains(std::string_view name) const { return by_name_.count(name) != 0; }

std::vector<std::size_t> NetGraph::weighted_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i : topo_) {
    if (is_weighted(layers_[i].kind)) out.push_back(i);
  }
  return out;
}

void NetGraph::build() {
  const std::size_t n = layers_.size();
  require(n > 0, ErrorCode::kSchema, "graph has no layers");
  by_name_.clear();
  for (std::size_t i = 0; i < n; ++i) {
    require(!layers_[i].name.empty(), ErrorCode::kSchema, "layer without name");
    require(by_name_.emplace(layers_[i].name, i).second, ErrorCode::kSchema,
            "duplicate layer name '" + layers_[i].name + "'");
  }
  producers_.assign(n, {});
  consumers_.assign(n, {});
  for (const auto& [a, b] : edges_) {
    auto ia = by_name_.find(a);
    auto ib = by_name_.find(b);
    require(ia != by_name_.end() && ib != by_name_.end(), ErrorCode::kDanglingEdge,
            "dangling edge " + a + " -> " + b);
    producers_[ib->second].push_back(ia->second);
    consumers_[ia->second].push_back(ib->second);
  }

  std::size_t inputs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const LayerSpec& l = layers_[i];
    const std::size_t np = producers_[i].size();
    if (l.kind == LayerKind::kInput) {
      ++inputs;
      input_ = i;
      require(np == 0, ErrorCode::kSchema, layer_ctx(l) + ": input layer cannot have producers");
    } else if (l.kind == LayerKind::kEwAdd) {
      require(np >= 2, ErrorCode::kDanglingEdge, layer_ctx(l) + ": ew_add needs >= 2 producers");
    } else if (l.kind == LayerKind::kConcat) {
      require(np >= 1, ErrorCode::kDanglingEdge, layer_ctx(l) + ": concat has no producer");
    } else {
      require(np == 1, np == 0 ? ErrorCode::kDanglingEdge : ErrorCode::kSchema,
              layer_ctx(l) + " needs exactly one producer, has " + std::to_string(np));
    }
  }
  require(inputs == 1, ErrorCode::kSchema, "graph needs exactly one input layer");

  // Kahn's algorithm; the min-heap on declaration index keeps the order stable.
  std::vector<std::size_t> indeg(n);
  for (std::size_t i = 0; i < n; ++i) indeg[i] = producers_[i].size();
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < n; ++i) {
    if (indeg[i] == 0) ready.push(i);
  }
  topo_.clear();
  while (!ready.empty()) {
    const std::size_t i = ready.top();
    ready.pop();
    topo_.push_back(i);
    for (std::size_t c : consumers_[i]) {
      if (--indeg[c] == 0) ready.push(c);
    }
  }
  require(topo_.size() == n, ErrorCode::kCycle, "graph contains a cycle");

  require(!input_shape_.empty(), ErrorCode::kSchema, "input_shape is empty");
  shapes_.assign(n, {});
  for (std::size_t i : topo_) {
    LayerSpec& l = layers_[i];
    const std::string ctx = layer_ctx(l);
    Shape in = l.kind == LayerKind::kInput ? input_shape_ : shapes_[producers_[i][0]];
    Shape out = in;
    auto need_spatial = [&] {
      require(in.size() == 3, ErrorCode::kShapeMismatch,
              ctx + " expects a [C,H,W] input, got " + shape_str(in));
    };
    switch (l.kind) {
      case LayerKind::kInput:
      case LayerKind::kOutput:
      case LayerKind::kRelu:
      case LayerKind::kRelu6:
        break;
      case LayerKind::kConv:
      case LayerKind::kDepthwiseConv: {
        need_spatial();
        require(l.weights.rank() == 4, ErrorCode::kShapeMismatch, ctx + ": kernel must be rank 4");
        require(l.stride == 1 || l.stride == 2, ErrorCode::kUnsupportedLayer,
                ctx + ": stride must be 1 or 2");
        const bool dw = l.kind == LayerKind::kDepthwiseConv;
        const std::size_t cin = dw ? l.weights.dim(0) : l.weights.dim(1);
        require(cin == in[0] && (!dw || l.weights.dim(1) == 1), ErrorCode::kShapeMismatch,
                ctx + ": kernel " + shape_str(l.weights.shape()) + " does not match input " +
                    shape_str(in));
        const std::size_t kh = l.weights.dim(2), kw = l.weights.dim(3);
        require(in[1] + 2 * l.padding >= kh && in[2] + 2 * l.padding >= kw,
                ErrorCode::kShapeMismatch, ctx + ": kernel larger than padded input");
        out = {l.weights.dim(0), (in[1] + 2 * l.padding - kh) / l.stride + 1,
               (in[2] + 2 * l.padding - kw) / l.stride + 1};
        break;
      }
      case LayerKind::kDense:
        require(in.size() == 1, ErrorCode::kShapeMismatch,
                ctx + " expects a flat input, got " + shape_str(in));
        require(l.weights.rank() == 2 && l.weights.dim(0) == in[0], ErrorCode::kShapeMismatch,
                ctx + ": weights " + shape_str(l.weights.shape()) + " do not match input " +
                    shape_str(in));
        out = {l.weights.dim(1)};
        break;
      case LayerKind::kEwAdd:
        for (std::size_t p : producers_[i]) {
          require(shapes_[p] == in, ErrorCode::kShapeMismatch,
                  ctx + ": operands " + shape_str(in) + " and " + shape_str(shapes_[p]) +
                      " differ");
        }
        break;
      case LayerKind::kConcat:
        out[0] = 0;
        for (std::size_t p : producers_[i]) {
          const Shape& s = shapes_[p];
          require(s.size() == in.size() && std::equal(s.begin() + 1, s.end(), in.begin() + 1),
                  ErrorCode::kShapeMismatch, ctx + ": operand shapes disagree");
          out[0] += s[0];
        }
        break;
      case LayerKind::kAvgpoolGlobal:
        need_spatial();
        out = {in[0]};
        break;
      case LayerKind::kMaxpool:
        need_spatial();
        require(l.kernel >= 1 && l.stride >= 1 && in[1] >= l.kernel && in[2] >= l.kernel,
                ErrorCode::kShapeMismatch, ctx + ": pooling window does not fit");
        out = {in[0], (in[1] - l.kernel) / l.stride + 1, (in[2] - l.kernel) / l.stride + 1};
        break;
      case LayerKind::kBatchnorm: {
        require(l.bn.has_value(), ErrorCode::kSchema, ctx + ": missing batchnorm parameters");
        const BnParams& bn = *l.bn;
        const std::size_t c = in[0];
        require(bn.mean.size() == c && bn.variance.size() == c && bn.gamma.size() == c &&
                    bn.beta.size() == c,
                ErrorCode::kShapeMismatch, ctx + ": batchnorm vectors must have length " +
                                               std::to_string(c));
        require(std::all_of(bn.variance.begin(), bn.variance.end(), [](float v) { return v >= 0; }),
                ErrorCode::kSchema, ctx + ": negative variance");
        require(bn.epsilon >= 0.0f, ErrorCode::kSchema, ctx + ": negative epsilon");
        break;
      }
    }
    if (is_weighted(l.kind)) {
      const std::size_t cout = l.out_channels();
      if (l.bias.empty()) l.bias = Tensor(Shape{cout});
      require(l.bias.shape() == Shape{cout}, ErrorCode::kShapeMismatch,
              ctx + ": bias must have length " + std::to_string(cout));
    }
    shapes_[i] = std::move(out);
  }

  if (!feature_attr_.empty()) {
    auto it = by_name_.find(feature_attr_);
    require(it != by_name_.end(), ErrorCode::kSchema,
            "feature_layer '" + feature_attr_ + "' not in graph");
    feature_ = it->second;
  } else {
    feature_ = topo_.back();
    for (std::size_t i : topo_) {
      if (layers_[i].kind == LayerKind::kAvgpoolGlobal) {
        feature_ = producers_[i][0];
        break;
      }
    }
  }
}

bool graphs_equal(const NetGraph& a, const NetGraph& b) {
  if (a.layers().size() != b.layers().size() || a.edges() != b.edges() ||
      a.input_shape() != b.input_shape() || a.feature_index() != b.feature_index()) {
    return false;
  }
  for (std::size_t i = 0; i < a.layers().size(); ++i) {
    const LayerSpec& x = a.layer(i);
    const LayerSpec& y = b.layer(i);
    if (x.name != y.name || x.kind != y.kind || x.stride != y.stride || x.padding != y.padding ||
        x.kernel != y.kernel || !bit_equal(x.weights, y.weights) || !bit_equal(x.bias, y.bias) ||
        x.bn.has_value() != y.bn.has_value()) {
      return false;
    }
    if (x.bn) {
      const BnParams& p = *x.bn;
      const BnParams& q = *y.bn;
      if (p.mean != q.mean || p.variance != q.variance || p.gamma != q.gamma || p.beta != q.beta ||
          p.epsilon != q.epsilon) {
        return false;
      }
    }
  }
  return true;
}

NetGraph fold_batchnorm(const NetGraph& graph) {
  std::vector<LayerSpec> layers = graph.layers();
  std::vector<bool> removed(layers.size(), false);
  std::vector<std::size_t> redirect(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) redirect[i] = i;
  std::string feature = graph.feature_layer_attr();

  for (std::size_t i : graph.topo_order()) {
    const LayerSpec& bnl = graph.layer(i);
    if (bnl.kind != LayerKind::kBatchnorm) continue;
    const std::size_t p = graph.producers(i)[0];
    const LayerSpec& prod = graph.layer(p);
    require(is_weighted(prod.kind) && graph.consumers(p).size() == 1,
            ErrorCode::kUnsupportedLayer,
            "batchnorm '" + bnl.name + "' without foldable producer (needs a conv/dense/depthwise "
            "layer feeding only it)");
    const BnParams& bn = *bnl.bn;
    LayerSpec& dst = layers[p];
    const std::size_t cout = prod.out_channels();
    std::vector<float> scale(cout);
    for (std::size_t c = 0; c < cout; ++c) {
      scale[c] = static_cast<float>(bn.gamma[c] / std::sqrt(static_cast<double>(bn.variance[c]) +
                                                             bn.epsilon));
    }
    Tensor& w = dst.weights;
    if (prod.kind == LayerKind::kDense) {
      for (std::size_t r = 0; r < w.dim(0); ++r) {
        for (std::size_t c = 0; c < cout; ++c) w[r * cout + c] *= scale[c];
      }
    } else {
      const std::size_t per = w.numel() / cout;
      for (std::size_t c = 0; c < cout; ++c) {
        for (std::size_t k = 0; k < per; ++k) w[c * per + k] *= scale[c];
      }
    }
    for (std::size_t c = 0; c < cout; ++c) {
      dst.bias[c] = (dst.bias[c] - bn.mean[c]) * scale[c] + bn.beta[c];
    }
    removed[i] = true;
    redirect[i] = redirect[p];
    if (feature == bnl.name) feature = prod.name;
  }

  std::vector<LayerSpec> out_layers;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!removed[i]) out_layers.push_back(std::move(layers[i]));
  }
  std::vector<std::pair<std::string, std::string>> out_edges;
  for (const auto& [a, b] : graph.edges()) {
    const std::size_t ib = graph.index(b);
    if (removed[ib]) continue;
    out_edges.emplace_back(graph.layer(redirect[graph.index(a)]).name, b);
  }
  return NetGraph(std::move(out_layers), std::move(out_edges), graph.input_shape(), feature);
}

std::set<std::string> select_8b_layers(const NetGraph& graph) {
  std::vector<std::pair<std::size_t, std::string>> sizes;
  std::size_t total = 0;
  for (std::size_t i : graph.weighted_layers()) {
    const LayerSpec& l = graph.layer(i);
    sizes.emplace_back(l.weights.numel(), l.name);
    total += l.weights.numel();
  }
  std::sort(sizes.begin(), sizes.end());
  std::set<std::string> out;
  std::size_t cum = 0;
  for (const auto& [count, name] : sizes) {
    out.insert(name);
    cum += count;
    if (cum * 100 >= total) break;
  }
  return out;
}

std::vector<std::string> fanout(const NetGraph& graph, std::string_view layer) {
  std::vector<std::string> out;
  for (std::size_t c : graph.consumers(graph.index(layer))) out.push_back(graph.layer(c).name);
  return out;
}

std::vector<std::string> producers(const NetGraph& graph, std::string_view layer) {
  std::vector<std::string> out;
  for (std::size_t p : graph.producers(graph.index(layer))) out.push_back(graph.layer(p).name);
  return out;
}

std::vector<Var> fp_forward(Tape& tape, const NetGraph& graph, Var input,
                            const ParamSource& params) {
  const Shape xs = input.shape();
  const Shape& is = graph.input_shape();
  require(xs.size() == is.size() + 1 && std::equal(is.begin(), is.end(), xs.begin() + 1),
          ErrorCode::kShapeMismatch,
          "input " + shape_str(xs) + " does not match graph input " + shape_str(is));
  std::vector<Var> out(graph.layers().size());
  for (std::size_t i : graph.topo_order()) {
    const LayerSpec& l = graph.layer(i);
    const auto& prods = graph.producers(i);
    auto weight = [&](bool bias) {
      if (params) return params(i, bias);
      return tape.constant(bias ? l.bias : l.weights);
    };
    Var x = prods.empty() ? Var{} : out[prods[0]];
    switch (l.kind) {
      case LayerKind::kInput: out[i] = input; break;
      case LayerKind::kOutput: out[i] = x; break;
      case LayerKind::kConv:
        out[i] = add(conv2d(x, weight(false), l.stride, l.padding), weight(true),
                     Broadcast::kChannel, 1);
        break;
      case LayerKind::kDepthwiseConv:
        out[i] = add(depthwise_conv2d(x, weight(false), l.stride, l.padding), weight(true),
                     Broadcast::kChannel, 1);
        break;
      case LayerKind::kDense:
        out[i] = add(matmul(x, weight(false)), weight(true), Broadcast::kChannel, 1);
        break;
      case LayerKind::kEwAdd: {
        Var acc = x;
        for (std::size_t k = 1; k < prods.size(); ++k) {
          acc = add(acc, out[prods[k]], Broadcast::kSame);
        }
        out[i] = acc;
        break;
      }
      case LayerKind::kRelu: out[i] = relu(x); break;
      case LayerKind::kRelu6: out[i] = relu6(x); break;
      case LayerKind::kAvgpoolGlobal: out[i] = avgpool_global(x); break;
      case LayerKind::kMaxpool: out[i] = maxpool(x, l.kernel, l.stride); break;
      case LayerKind::kConcat: {
        std::vector<Var> xs_in;
        for (std::size_t p : prods) xs_in.push_back(out[p]);
        out[i] = concat(xs_in, 1);
        break;
      }
      case LayerKind::kBatchnorm: {
        const BnParams& bn = *l.bn;
        const std::size_t c = bn.mean.size();
        Tensor scale(Shape{c}), shift(Shape{c});
        for (std::size_t k = 0; k < c; ++k) {
          scale[k] = static_cast<float>(
              bn.gamma[k] / std::sqrt(static_cast<double>(bn.variance[k]) + bn.epsilon));
          shift[k] = bn.beta[k] - bn.mean[k] * scale[k];
        }
        out[i] = add(mul(x, tape.constant(scale), Broadcast::kChannel, 1),
                     tape.constant(shift), Broadcast::kChannel, 1);
        break;
      }
    }
  }
  return out;
}

std::map<std::string, Tensor> run_fp(const NetGraph& graph, const Tensor& input) {
  Tape tape;
  tape.set_grad_enabled(false);
  const std::vector<Var> vars = fp_forward(tape, graph, tape.constant(input));
  std::map<std::string, Tensor> out;
  for (std::size_t i = 0; i < vars.size(); ++i) out.emplace(graph.layer(i).name, vars[i].value());
  return out;
}

Tensor run_fp_layer(const NetGraph& graph, const Tensor& input, std::size_t layer) {
  Tape tape;
  tape.set_grad_enabled(false);
  const std::vector<Var> vars = fp_forward(tape, graph, tape.constant(input));
  return vars.at(layer).value();
}

}  // namespace qft
