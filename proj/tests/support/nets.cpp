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

#include "nets.hpp"

#include <algorithm>
#include <cmath>

#include "qft/trainer.hpp"

namespace qft::testing {

NetBuilder::NetBuilder(Shape input_shape, std::uint64_t seed)
    : input_shape_(std::move(input_shape)), rng_(seed) {}

Tensor NetBuilder::randn(Shape shape, float stddev) {
  std::normal_distribution<float> n(0.0f, stddev);
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = n(rng_);
  return t;
}

std::string NetBuilder::input(const std::string& name) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::kInput;
  layers_.push_back(l);
  channels_[name] = input_shape_[0];
  return name;
}

std::string NetBuilder::conv(const std::string& from, const std::string& name, std::size_t cout,
                             std::size_t k, std::size_t stride, std::size_t pad) {
  const std::size_t cin = channels(from);
  const float sd = std::sqrt(2.0f / static_cast<float>(cin * k * k));
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::kConv;
  l.weights = randn({cout, cin, k, k}, sd);
  l.bias = randn({cout}, bias_scale_);
  l.stride = stride;
  l.padding = pad;
  layers_.push_back(std::move(l));
  edges_.emplace_back(from, name);
  channels_[name] = cout;
  return name;
}

std::string NetBuilder::depthwise(const std::string& from, const std::string& name, std::size_t k,
                                  std::size_t stride, std::size_t pad) {
  const std::size_t c = channels(from);
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::kDepthwiseConv;
  l.weights = randn({c, 1, k, k}, std::sqrt(2.0f / static_cast<float>(k * k)));
  l.bias = randn({c}, bias_scale_);
  l.stride = stride;
  l.padding = pad;
  layers_.push_back(std::move(l));
  edges_.emplace_back(from, name);
  channels_[name] = c;
  return name;
}

std::string NetBuilder::dense(const std::string& from, const std::string& name, std::size_t cout) {
  const std::size_t cin = channels(from);
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::kDense;
  l.weights = randn({cin, cout}, std::sqrt(2.0f / static_cast<float>(cin)));
  l.bias = randn({cout}, bias_scale_);
  layers_.push_back(std::move(l));
  edges_.emplace_back(from, name);
  channels_[name] = cout;
  return name;
}

std::string NetBuilder::unary(const std::string& from, const std::string& name, LayerKind kind) {
  LayerSpec l;
  l.name = name;
  l.kind = kind;
  layers_.push_back(l);
  edges_.emplace_back(from, name);
  channels_[name] = channels(from);
  return name;
}

std::string NetBuilder::maxpool(const std::string& from, const std::string& name, std::size_t k,
                                std::size_t stride) {
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::kMaxpool;
  l.kernel = k;
  l.stride = stride;
  layers_.push_back(l);
  edges_.emplace_back(from, name);
  channels_[name] = channels(from);
  return name;
}

std::string NetBuilder::join(const std::vector<std::string>& from, const std::string& name,
                             LayerKind kind) {
  LayerSpec l;
  l.name = name;
  l.kind = kind;
  layers_.push_back(l);
  std::size_t c = 0;
  for (const std::string& f : from) {
    edges_.emplace_back(f, name);
    c = kind == LayerKind::kConcat ? c + channels(f) : channels(f);
  }
  channels_[name] = c;
  return name;
}

std::string NetBuilder::batchnorm(const std::string& from, const std::string& name) {
  const std::size_t c = channels(from);
  std::uniform_real_distribution<float> u(0.5f, 1.5f);
  std::normal_distribution<float> n(0.0f, 0.2f);
  BnParams bn;
  for (std::size_t i = 0; i < c; ++i) {
    bn.mean.push_back(n(rng_));
    bn.variance.push_back(u(rng_));
    bn.gamma.push_back(u(rng_));
    bn.beta.push_back(n(rng_));
  }
  LayerSpec l;
  l.name = name;
  l.kind = LayerKind::kBatchnorm;
  l.bn = std::move(bn);
  layers_.push_back(std::move(l));
  edges_.emplace_back(from, name);
  channels_[name] = c;
  return name;
}

std::string NetBuilder::output(const std::string& from, const std::string& name) {
  return unary(from, name, LayerKind::kOutput);
}

void NetBuilder::spread_channels(const std::string& name, float spread) {
  for (LayerSpec& l : layers_) {
    if (l.name != name) continue;
    const std::size_t cout = l.bias.numel();
    const std::vector<float> f = log_uniform(cout, spread, rng_);
    const std::size_t n = l.weights.numel();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = l.kind == LayerKind::kDense ? i % cout : i / (n / cout);
      l.weights[i] *= f[c];
    }
    for (std::size_t c = 0; c < cout; ++c) l.bias[c] *= f[c];
  }
}

NetGraph NetBuilder::build(const std::string& feature_layer) const {
  return NetGraph(layers_, edges_, input_shape_, feature_layer);
}

std::vector<float> log_uniform(std::size_t n, float spread, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-std::log(spread), std::log(spread));
  std::vector<float> out(n);
  for (float& v : out) v = std::exp(u(rng));
  return out;
}

NetGraph relu_net(std::uint64_t seed, std::size_t width) {
  NetBuilder b({3, 8, 8}, seed);
  std::string x = b.input();
  x = b.conv(x, "conv1", width, 3);
  x = b.unary(x, "relu1", LayerKind::kRelu);
  x = b.conv(x, "conv2", 2 * width, 3, 2, 1);
  x = b.unary(x, "relu2", LayerKind::kRelu);
  x = b.depthwise(x, "dw3", 3);
  x = b.unary(x, "relu3", LayerKind::kRelu);
  x = b.conv(x, "conv4", 2 * width, 1, 1, 0);
  x = b.unary(x, "relu4", LayerKind::kRelu);
  x = b.join({x}, "gap", LayerKind::kAvgpoolGlobal);
  x = b.dense(x, "fc", 10);
  b.output(x);
  return b.build();
}

NetGraph branchy_net(std::uint64_t seed) {
  NetBuilder b({3, 8, 8}, seed);
  std::string x = b.input();
  x = b.conv(x, "stem", 8, 3);
  x = b.unary(x, "stem_relu", LayerKind::kRelu);
  std::string r = b.conv(x, "res_a", 8, 3);
  r = b.unary(r, "res_a_relu", LayerKind::kRelu);
  r = b.conv(r, "res_b", 8, 3);
  std::string s = b.join({x, r}, "add", LayerKind::kEwAdd);
  s = b.unary(s, "add_relu", LayerKind::kRelu);
  s = b.maxpool(s, "pool", 2, 2);
  std::string p = b.conv(s, "branch_p", 6, 1, 1, 0);
  p = b.unary(p, "branch_p_relu", LayerKind::kRelu);
  std::string q = b.depthwise(s, "branch_q", 3);
  q = b.unary(q, "branch_q_relu6", LayerKind::kRelu6);
  std::string c = b.join({p, q}, "cat", LayerKind::kConcat);
  c = b.conv(c, "mix", 12, 3);
  c = b.unary(c, "mix_relu", LayerKind::kRelu);
  c = b.join({c}, "gap", LayerKind::kAvgpoolGlobal);
  c = b.dense(c, "fc", 10);
  b.output(c);
  return b.build();
}

NetGraph mlp_net(std::uint64_t seed) {
  NetBuilder b({24}, seed);
  std::string x = b.input();
  x = b.dense(x, "fc1", 32);
  x = b.unary(x, "relu1", LayerKind::kRelu);
  x = b.dense(x, "fc2", 32);
  x = b.unary(x, "relu2", LayerKind::kRelu);
  x = b.dense(x, "fc3", 10);
  b.output(x);
  return b.build();
}

std::vector<NetGraph> regression_nets() {
  return {relu_net(11), relu_net(12, 12), branchy_net(13), branchy_net(14), mlp_net(15)};
}

Tensor random_batch(const Shape& shape, std::size_t batch, std::uint64_t seed, float scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, scale);
  Shape s = shape;
  s.insert(s.begin(), batch);
  Tensor t(s);
  for (float& v : t.data()) v = n(rng);
  return t;
}

NetGraph fit_classifier(const NetGraph& graph, const GaussianMixtureSource& data,
                        std::size_t steps, std::size_t batch, double lr, std::uint64_t seed) {
  std::vector<Parameter> params;
  std::vector<int> w_slot(graph.layers().size(), -1);
  params.reserve(2 * graph.layers().size());
  for (std::size_t i : graph.weighted_layers()) {
    w_slot[i] = static_cast<int>(params.size());
    params.emplace_back("w", graph.layer(i).weights);
    params.emplace_back("b", graph.layer(i).bias);
  }
  std::vector<Parameter*> ptrs;
  for (Parameter& p : params) ptrs.push_back(&p);
  Adam adam(ptrs);
  const std::size_t last = graph.topo_order().back();
  for (std::size_t step = 0; step < steps; ++step) {
    const std::size_t first = seed * 7919 + step * batch;
    const Tensor x = data.batch(first, batch);
    const std::vector<std::size_t> y = data.labels(first, batch);
    for (Parameter& p : params) p.zero_grad();
    Tape tape;
    const auto out = fp_forward(tape, graph, tape.constant(x), [&](std::size_t layer, bool bias) {
      return tape.parameter(params[static_cast<std::size_t>(w_slot[layer]) + (bias ? 1 : 0)]);
    });
    const Var logits = out[last];
    const std::size_t K = logits.shape()[1];
    Tensor onehot(logits.shape());
    for (std::size_t b = 0; b < batch; ++b) onehot[b * K + y[b]] = -1.0f / static_cast<float>(batch);
    const Var loss = reduce_sum(mul(tape.constant(onehot), log_softmax(logits), Broadcast::kSame));
    tape.backward(loss);
    const double t = static_cast<double>(step) / static_cast<double>(steps);
    adam.step(lr * 0.5 * (1.0 + std::cos(3.141592653589793 * t)));
  }
  std::vector<LayerSpec> layers = graph.layers();
  for (std::size_t i : graph.weighted_layers()) {
    layers[i].weights = params[static_cast<std::size_t>(w_slot[i])].value;
    layers[i].bias = params[static_cast<std::size_t>(w_slot[i]) + 1].value;
  }
  return NetGraph(std::move(layers), graph.edges(), graph.input_shape(), graph.feature_layer_attr());
}

double fp_accuracy(const NetGraph& graph, const GaussianMixtureSource& data, std::size_t first,
                   std::size_t count) {
  const Tensor x = data.batch(first, count);
  const std::vector<std::size_t> y = data.labels(first, count);
  Tape tape;
  tape.set_grad_enabled(false);
  const Tensor& logits = fp_forward(tape, graph, tape.constant(x))[graph.topo_order().back()].value();
  const std::size_t K = logits.dim(1);
  std::size_t hit = 0;
  for (std::size_t b = 0; b < count; ++b) {
    const float* row = logits.data().data() + b * K;
    if (static_cast<std::size_t>(std::max_element(row, row + K) - row) == y[b]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(count);
}

}  // namespace qft::testing
