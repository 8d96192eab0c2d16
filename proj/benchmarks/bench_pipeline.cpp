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

#include <benchmark/benchmark.h>

#include <random>

#include "qft/deploy.hpp"
#include "qft/dof.hpp"
#include "qft/graph.hpp"

namespace {

qft::Tensor gaussian(qft::Shape shape, float sd, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, sd);
  qft::Tensor t(std::move(shape));
  for (float& v : t.data()) v = n(rng);
  return t;
}

// conv(3->c) relu conv(c->c, stride 2) relu gap dense(c->10), 16x16 input.
qft::NetGraph bench_net(std::size_t c) {
  std::mt19937_64 rng(7);
  auto layer = [](std::string name, qft::LayerKind kind) {
    qft::LayerSpec l;
    l.name = std::move(name);
    l.kind = kind;
    return l;
  };
  std::vector<qft::LayerSpec> ls;
  ls.push_back(layer("input", qft::LayerKind::kInput));
  qft::LayerSpec c1 = layer("conv1", qft::LayerKind::kConv);
  c1.weights = gaussian({c, 3, 3, 3}, 0.3f, rng);
  c1.bias = gaussian({c}, 0.1f, rng);
  c1.padding = 1;
  ls.push_back(c1);
  ls.push_back(layer("relu1", qft::LayerKind::kRelu));
  qft::LayerSpec c2 = layer("conv2", qft::LayerKind::kConv);
  c2.weights = gaussian({c, c, 3, 3}, 0.1f, rng);
  c2.bias = gaussian({c}, 0.1f, rng);
  c2.padding = 1;
  c2.stride = 2;
  ls.push_back(c2);
  ls.push_back(layer("relu2", qft::LayerKind::kRelu));
  ls.push_back(layer("gap", qft::LayerKind::kAvgpoolGlobal));
  qft::LayerSpec fc = layer("fc", qft::LayerKind::kDense);
  fc.weights = gaussian({c, 10}, 0.2f, rng);
  fc.bias = gaussian({10}, 0.1f, rng);
  ls.push_back(fc);
  ls.push_back(layer("output", qft::LayerKind::kOutput));
  return qft::NetGraph(std::move(ls),
                       {{"input", "conv1"}, {"conv1", "relu1"}, {"relu1", "conv2"},
                        {"conv2", "relu2"}, {"relu2", "gap"}, {"gap", "fc"}, {"fc", "output"}},
                       qft::Shape{3, 16, 16});
}

struct Fixture {
  qft::NetGraph graph;
  qft::Tensor batch;
  qft::DofSet dof;

  explicit Fixture(std::size_t c) : graph(bench_net(c)) {
    std::mt19937_64 rng(8);
    batch = gaussian({8, 3, 16, 16}, 1.0f, rng);
    const std::vector<qft::Tensor> calib{batch};
    dof = qft::init_quantization(graph, qft::HwConfig{}, calib);
  }
};

void BM_RunFp(benchmark::State& state) {
  Fixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(qft::run_fp(f.graph, f.batch).size());
}
BENCHMARK(BM_RunFp)->Arg(16)->Arg(32);

void BM_SimulateForwardBackward(benchmark::State& state) {
  Fixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    for (qft::Parameter* p : f.dof.parameters()) p->zero_grad();
    qft::Tape tape;
    const qft::StudentForward s = qft::student_forward(tape, f.graph, f.dof, tape.constant(f.batch));
    tape.backward(qft::reduce_sum(qft::mul(s.features, s.features, qft::Broadcast::kSame)));
  }
}
BENCHMARK(BM_SimulateForwardBackward)->Arg(16)->Arg(32);

void BM_RunInt(benchmark::State& state) {
  Fixture f(static_cast<std::size_t>(state.range(0)));
  const qft::DeployExport exp = qft::export_dof(f.graph, f.dof);
  const qft::IntTensor x = qft::encode_input(exp, f.batch);
  for (auto _ : state) benchmark::DoNotOptimize(qft::run_int(exp, x).size());
}
BENCHMARK(BM_RunInt)->Arg(16)->Arg(32);

}  // namespace
