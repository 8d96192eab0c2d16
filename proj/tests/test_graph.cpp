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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "nets.hpp"
#include "qft/error.hpp"
#include "qft/graph.hpp"

namespace qft {
namespace {

using testing::NetBuilder;

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "qft_test_graph";
  std::filesystem::create_directories(dir);
  return dir / name;
}

ErrorCode error_of(const std::string& json) {
  try {
    graph_from_json(json);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "graph accepted: " << json;
  return ErrorCode::kInvalidArgument;
}

const char* kMlp = R"({
  "layers": [
    {"name": "in", "kind": "input"},
    {"name": "fc1", "kind": "dense", "weights": {"shape": [2, 3], "data": [1, 2, 3, 4, 5, 6]},
     "bias": {"shape": [3], "data": [0.5, 0, -0.5]}},
    {"name": "act", "kind": "relu"},
    {"name": "fc2", "kind": "dense", "weights": {"shape": [3, 1], "data": [1, -1, 2]}},
    {"name": "out", "kind": "output"}
  ],
  "edges": [["in", "fc1"], ["fc1", "act"], ["act", "fc2"], ["fc2", "out"]],
  "input_shape": [2]
})";

double max_rel_diff(const Tensor& a, const Tensor& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    num = std::max(num, static_cast<double>(std::abs(a[i] - b[i])));
    den = std::max(den, static_cast<double>(std::abs(b[i])));
  }
  return num / std::max(den, 1e-30);
}

TEST(Graph, ParsesMlp) {
  const NetGraph g = graph_from_json(kMlp);
  EXPECT_EQ(g.weighted_layers().size(), 2u);
  EXPECT_EQ(g.layer("fc1").kind, LayerKind::kDense);
  EXPECT_EQ(g.out_shape(g.index("fc1")), (Shape{3}));
  EXPECT_EQ(g.layer("fc2").bias.values(), (std::vector<float>{0.0f}));
  // No avgpool: the feature layer is the last layer.
  EXPECT_EQ(g.layer(g.feature_index()).name, "out");
}

TEST(Graph, DistinctErrors) {
  EXPECT_EQ(error_of(R"({"layers": [{"name": "a"}], "edges": [], "input_shape": [1]})"),
            ErrorCode::kSchema);
  EXPECT_EQ(error_of(R"({"layers": [{"name": "in", "kind": "input"},
                                    {"name": "r", "kind": "relu"}],
                         "edges": [["in", "r"], ["ghost", "r"]], "input_shape": [1]})"),
            ErrorCode::kDanglingEdge);
  EXPECT_EQ(error_of(R"({"layers": [{"name": "in", "kind": "input"},
                                    {"name": "a", "kind": "ew_add"},
                                    {"name": "r", "kind": "relu"}],
                         "edges": [["in", "a"], ["r", "a"], ["a", "r"]], "input_shape": [1]})"),
            ErrorCode::kCycle);
  EXPECT_EQ(error_of(R"({"layers": [{"name": "in", "kind": "input"},
                                    {"name": "fc", "kind": "dense",
                                     "weights": {"shape": [3, 1], "data": [1, 2, 3]}}],
                         "edges": [["in", "fc"]], "input_shape": [2]})"),
            ErrorCode::kShapeMismatch);
  EXPECT_EQ(error_of(R"({"layers": [{"name": "in", "kind": "lstm"}], "edges": [],
                         "input_shape": [1]})"),
            ErrorCode::kUnsupportedLayer);
  EXPECT_EQ(error_of("{not json"), ErrorCode::kSchema);
}

TEST(Graph, MissingFileIsNotFound) {
  try {
    load_graph(temp_path("does_not_exist.json").string());
    FAIL() << "expected not found";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNotFound);
    EXPECT_NE(std::string(e.what()).find("graph not found"), std::string::npos);
  }
}

TEST(Graph, RoundTripIsBitIdentical) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const NetGraph g = testing::branchy_net(seed);
    const NetGraph back = graph_from_json(graph_to_json(g));
    EXPECT_TRUE(graphs_equal(g, back));

    const auto path = temp_path("round_trip_" + std::to_string(seed) + ".json");
    save_graph(g, path.string());
    EXPECT_TRUE(graphs_equal(g, load_graph(path.string())));
    save_graph(g, path.string(), true);
    EXPECT_TRUE(std::filesystem::exists(path.string() + ".bin"));
    EXPECT_TRUE(graphs_equal(g, load_graph(path.string())));
  }
}

TEST(Graph, RoundTripKeepsAwkwardFloats) {
  NetBuilder b({3}, 4);
  b.input();
  b.dense("input", "fc", 2);
  b.output("fc");
  NetGraph g = b.build();
  LayerSpec& l = g.mutable_layer(g.index("fc"));
  l.weights[0] = 0.1f;
  l.weights[1] = 1e-38f;
  l.weights[2] = -3.4028235e38f;
  l.weights[3] = 1.0f / 3.0f;
  EXPECT_TRUE(graphs_equal(g, graph_from_json(graph_to_json(g))));
}

TEST(Graph, TopologyQueries) {
  const NetGraph chain = testing::mlp_net(1);
  EXPECT_EQ(fanout(chain, "fc1"), (std::vector<std::string>{"relu1"}));
  EXPECT_EQ(producers(chain, "fc2"), (std::vector<std::string>{"relu1"}));

  const NetGraph g = testing::branchy_net(5);
  EXPECT_EQ(fanout(g, "stem_relu"), (std::vector<std::string>{"res_a", "add"}));
  EXPECT_EQ(fanout(g, "pool"), (std::vector<std::string>{"branch_p", "branch_q"}));
  EXPECT_EQ(producers(g, "add").size(), 2u);
  EXPECT_THROW(fanout(g, "nope"), Error);
  EXPECT_EQ(g.layer(g.feature_index()).name, "mix_relu");
}

TEST(Graph, TopologicalOrderIsStable) {
  const NetGraph a = testing::branchy_net(6);
  const NetGraph b = graph_from_json(graph_to_json(a));
  EXPECT_EQ(a.topo_order(), b.topo_order());
  std::vector<std::size_t> pos(a.layers().size());
  for (std::size_t k = 0; k < a.topo_order().size(); ++k) pos[a.topo_order()[k]] = k;
  for (const auto& [from, to] : a.edges()) EXPECT_LT(pos[a.index(from)], pos[a.index(to)]);
}

NetGraph single_dense(float w, const BnParams& bn) {
  std::vector<LayerSpec> layers(4);
  layers[0].name = "in";
  layers[1].name = "fc";
  layers[1].kind = LayerKind::kDense;
  layers[1].weights = Tensor({1, 1}, std::vector<float>{w});
  layers[2].name = "bn";
  layers[2].kind = LayerKind::kBatchnorm;
  layers[2].bn = bn;
  layers[3].name = "out";
  layers[3].kind = LayerKind::kOutput;
  return NetGraph(layers, {{"in", "fc"}, {"fc", "bn"}, {"bn", "out"}}, {1});
}

TEST(Graph, FoldBatchnormExamples) {
  const BnParams identity{{0.0f}, {1.0f}, {1.0f}, {0.0f}, 0.0f};
  NetGraph f = fold_batchnorm(single_dense(1.5f, identity));
  EXPECT_FALSE(f.contains("bn"));
  EXPECT_EQ(f.layer("fc").weights[0], 1.5f);

  const BnParams doubling{{0.0f}, {1.0f}, {2.0f}, {0.0f}, 0.0f};
  f = fold_batchnorm(single_dense(1.0f, doubling));
  EXPECT_EQ(f.layer("fc").weights[0], 2.0f);
  EXPECT_EQ(producers(f, "out"), (std::vector<std::string>{"fc"}));
}

TEST(Graph, FoldBatchnormPreservesOutputs) {
  NetBuilder b({3, 6, 6}, 7);
  std::string x = b.input();
  x = b.conv(x, "conv1", 5, 3);
  x = b.batchnorm(x, "bn1");
  x = b.unary(x, "relu1", LayerKind::kRelu);
  x = b.depthwise(x, "dw", 3);
  x = b.batchnorm(x, "bn2");
  x = b.join({x}, "gap", LayerKind::kAvgpoolGlobal);
  x = b.dense(x, "fc", 4);
  x = b.batchnorm(x, "bn3");
  b.output(x);
  const NetGraph g = b.build();
  const NetGraph f = fold_batchnorm(g);
  EXPECT_EQ(f.layers().size(), g.layers().size() - 3);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Tensor in = testing::random_batch(g.input_shape(), 1, 100 + s);
    EXPECT_LT(max_rel_diff(run_fp(f, in).at("output"), run_fp(g, in).at("output")), 1e-5);
  }
}

TEST(Graph, FoldRejectsUnfoldableBatchnorm) {
  NetBuilder b({4}, 8);
  std::string x = b.input();
  x = b.dense(x, "fc", 4);
  x = b.unary(x, "relu", LayerKind::kRelu);
  x = b.batchnorm(x, "bn");
  b.output(x);
  try {
    fold_batchnorm(b.build());
    FAIL() << "expected unfoldable batchnorm";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnsupportedLayer);
  }
}

TEST(Graph, Select8bThresholdArithmetic) {
  // 1x1 conv chain whose kernels have exactly the listed element counts.
  auto build = [](const std::vector<std::size_t>& counts) {
    std::vector<LayerSpec> layers(1);
    layers[0].name = "in";
    std::vector<std::pair<std::string, std::string>> edges;
    std::string prev = "in";
    std::size_t c = 1;
    for (std::size_t k = 0; k < counts.size(); ++k) {
      LayerSpec l;
      l.name = "L" + std::to_string(k);
      l.kind = LayerKind::kConv;
      const std::size_t cout = counts[k] / c;
      l.weights = Tensor({cout, c, 1, 1});
      layers.push_back(l);
      edges.emplace_back(prev, l.name);
      prev = l.name;
      c = cout;
    }
    return NetGraph(layers, edges, {1, 2, 2});
  };
  // Total 100: the first size-1 layer alone reaches 1%; ties break by name.
  EXPECT_EQ(select_8b_layers(build({1, 1, 98})), (std::set<std::string>{"L0"}));
  // Total 1005, 1% = 10.05: 5 falls short, 5 + 10 reaches it.
  EXPECT_EQ(select_8b_layers(build({5, 10, 990})), (std::set<std::string>{"L0", "L1"}));

  NetBuilder b({4}, 9);
  b.input();
  b.dense("input", "only", 3);
  b.output("only");
  EXPECT_EQ(select_8b_layers(b.build()), (std::set<std::string>{"only"}));
}

TEST(Graph, RunFpExamples) {
  std::vector<LayerSpec> layers(4);
  layers[0].name = "in";
  layers[1].name = "id";
  layers[1].kind = LayerKind::kDense;
  layers[1].weights = Tensor({2, 2}, std::vector<float>{1, 0, 0, 1});
  layers[2].name = "r6";
  layers[2].kind = LayerKind::kRelu6;
  layers[3].name = "out";
  layers[3].kind = LayerKind::kOutput;
  const NetGraph g(layers, {{"in", "id"}, {"id", "r6"}, {"r6", "out"}}, {2});
  const auto acts = run_fp(g, Tensor({1, 2}, std::vector<float>{-1.0f, 7.0f}));
  EXPECT_EQ(acts.at("id").values(), (std::vector<float>{-1.0f, 7.0f}));
  EXPECT_EQ(acts.at("r6").values(), (std::vector<float>{0.0f, 6.0f}));
  EXPECT_THROW(run_fp(g, Tensor({1, 3})), Error);
}

// Direct convolution + relu oracle for a conv chain.
std::vector<double> direct_conv_relu(const std::vector<double>& x, std::size_t C, std::size_t H,
                                     const LayerSpec& l) {
  const std::size_t O = l.weights.dim(0), k = l.weights.dim(2), s = l.stride, p = l.padding;
  const std::size_t Ho = (H + 2 * p - k) / s + 1;
  std::vector<double> y(O * Ho * Ho);
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Ho; ++j) {
        double acc = l.bias[o];
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t u = 0; u < k; ++u)
            for (std::size_t v = 0; v < k; ++v) {
              const long r = static_cast<long>(i * s + u) - static_cast<long>(p);
              const long q = static_cast<long>(j * s + v) - static_cast<long>(p);
              if (r < 0 || q < 0 || r >= static_cast<long>(H) || q >= static_cast<long>(H)) continue;
              acc += x[(c * H + static_cast<std::size_t>(r)) * H + static_cast<std::size_t>(q)] *
                     l.weights[((o * C + c) * k + u) * k + v];
            }
        y[(o * Ho + i) * Ho + j] = std::max(acc, 0.0);
      }
  return y;
}

TEST(Graph, RunFpMatchesDirectConvolution) {
  NetBuilder b({2, 4, 4}, 10);
  std::string x = b.input();
  x = b.conv(x, "c1", 3, 3);
  x = b.unary(x, "r1", LayerKind::kRelu);
  x = b.conv(x, "c2", 4, 3, 2, 1);
  x = b.unary(x, "r2", LayerKind::kRelu);
  x = b.conv(x, "c3", 2, 1, 1, 0);
  x = b.unary(x, "r3", LayerKind::kRelu);
  b.output(x);
  const NetGraph g = b.build();
  const Tensor in = testing::random_batch(g.input_shape(), 1, 11);
  std::vector<double> ref(in.data().begin(), in.data().end());
  std::size_t C = 2, H = 4;
  for (const char* name : {"c1", "c2", "c3"}) {
    const LayerSpec& l = g.layer(name);
    ref = direct_conv_relu(ref, C, H, l);
    C = l.weights.dim(0);
    H = (H + 2 * l.padding - l.weights.dim(2)) / l.stride + 1;
  }
  const Tensor out = run_fp(g, in).at("output");
  ASSERT_EQ(out.numel(), ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out[i], ref[i], 1e-6);
}

}  // namespace
}  // namespace qft
