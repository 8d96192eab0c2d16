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

#include "qft/dof.hpp"
#include "qft/solvers.hpp"

namespace {

qft::Tensor gaussian(qft::Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  qft::Tensor t(std::move(shape));
  for (float& v : t.data()) v = n(rng);
  return t;
}

const qft::QuantSpec kW4{4, true};

void BM_Ppq(benchmark::State& state) {
  const qft::Tensor x = gaussian({static_cast<std::size_t>(state.range(0))}, 1);
  for (auto _ : state) benchmark::DoNotOptimize(qft::ppq(x.data(), kW4).scale);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Ppq)->Arg(576)->Arg(4096)->Arg(36864);

void BM_ApqMatrix(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const qft::Tensor w = gaussian({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(qft::apq(w, kW4).mse);
}
BENCHMARK(BM_ApqMatrix)->Arg(16)->Arg(64)->Arg(128);

void BM_ApqConv3x3(benchmark::State& state) {
  const std::size_t c = static_cast<std::size_t>(state.range(0));
  const qft::Tensor w = gaussian({c, c, 3, 3}, 3);
  qft::LayerSpec l;
  l.kind = qft::LayerKind::kConv;
  l.weights = w;
  const qft::KernelView v = qft::kernel_view(l);
  for (auto _ : state) benchmark::DoNotOptimize(qft::apq(w, v, kW4).mse);
}
BENCHMARK(BM_ApqConv3x3)->Arg(32)->Arg(64);

}  // namespace
