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

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "qft/error.hpp"
#include "qft/graph.hpp"

namespace qft {

namespace {

using nlohmann::json;

std::string read_file(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::kNotFound, std::string(what) + " not found: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<float> read_blob(const std::string& path) {
  const std::string bytes = read_file(path, "weight blob");
  require(bytes.size() % 4 == 0, ErrorCode::kSchema, "weight blob size is not a multiple of 4");
  std::vector<float> out(bytes.size() / 4);
  // Little-endian hosts only; the blob format is defined as little-endian.
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

Tensor tensor_from_json(const json& j, const std::vector<float>* blob, const std::string& ctx) {
  require(j.is_object() && j.contains("shape"), ErrorCode::kSchema, ctx + ": tensor needs 'shape'");
  Shape shape = j.at("shape").get<Shape>();
  std::vector<float> data;
  if (j.contains("data")) {
    data = j.at("data").get<std::vector<float>>();
  } else if (j.contains("offset")) {
    require(blob != nullptr, ErrorCode::kSchema, ctx + ": 'offset' given but no 'blob' file");
    const std::size_t off = j.at("offset").get<std::size_t>();
    const std::size_t n = shape_numel(shape);
    require(off + n <= blob->size(), ErrorCode::kSchema, ctx + ": blob offset out of range");
    data.assign(blob->begin() + static_cast<std::ptrdiff_t>(off),
                blob->begin() + static_cast<std::ptrdiff_t>(off + n));
  } else {
    fail(ErrorCode::kSchema, ctx + ": tensor needs 'data' or 'offset'");
  }
  require(data.size() == shape_numel(shape), ErrorCode::kSchema,
          ctx + ": data length does not match shape " + shape_str(shape));
  return Tensor::from_external(std::move(shape), std::move(data));
}

json tensor_to_json(const Tensor& t, std::vector<float>* blob) {
  json j;
  j["shape"] = t.shape();
  if (blob) {
    j["offset"] = blob->size();
    blob->insert(blob->end(), t.data().begin(), t.data().end());
  } else {
    j["data"] = t.values();
  }
  return j;
}

NetGraph parse(const json& doc, const std::string& base_dir) {
  require(doc.is_object(), ErrorCode::kSchema, "graph document must be an object");
  for (const char* key : {"layers", "edges", "input_shape"}) {
    require(doc.contains(key), ErrorCode::kSchema, std::string("graph missing '") + key + "'");
  }
  std::vector<float> blob;
  const bool has_blob = doc.contains("blob");
  if (has_blob) {
    std::filesystem::path p = doc.at("blob").get<std::string>();
    if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
    blob = read_blob(p.string());
  }
  std::vector<LayerSpec> layers;
  for (const json& jl : doc.at("layers")) {
    require(jl.contains("name") && jl.contains("kind"), ErrorCode::kSchema,
            "layer entry needs 'name' and 'kind'");
    LayerSpec l;
    l.name = jl.at("name").get<std::string>();
    l.kind = layer_kind_from_string(jl.at("kind").get<std::string>());
    const std::string ctx = "layer '" + l.name + "'";
    if (jl.contains("attrs")) {
      const json& a = jl.at("attrs");
      l.stride = a.value("stride", std::size_t{1});
      l.padding = a.value("padding", std::size_t{0});
      l.kernel = a.value("kernel", std::size_t{2});
      if (l.kind == LayerKind::kBatchnorm) {
        BnParams bn;
        for (const char* key : {"mean", "variance", "gamma", "beta"}) {
          require(a.contains(key), ErrorCode::kSchema, ctx + ": batchnorm needs '" + key + "'");
        }
        bn.mean = a.at("mean").get<std::vector<float>>();
        bn.variance = a.at("variance").get<std::vector<float>>();
        bn.gamma = a.at("gamma").get<std::vector<float>>();
        bn.beta = a.at("beta").get<std::vector<float>>();
        bn.epsilon = a.value("epsilon", 1e-5f);
        l.bn = std::move(bn);
      }
    }
    if (jl.contains("weights")) l.weights = tensor_from_json(jl.at("weights"), &blob, ctx);
    if (jl.contains("bias")) l.bias = tensor_from_json(jl.at("bias"), &blob, ctx);
    require(!is_weighted(l.kind) || !l.weights.empty(), ErrorCode::kSchema,
            ctx + ": weighted layer without weights");
    layers.push_back(std::move(l));
  }
  std::vector<std::pair<std::string, std::string>> edges;
  for (const json& e : doc.at("edges")) {
    require(e.is_array() && e.size() == 2, ErrorCode::kSchema, "edge must be a [from, to] pair");
    edges.emplace_back(e[0].get<std::string>(), e[1].get<std::string>());
  }
  return NetGraph(std::move(layers), std::move(edges), doc.at("input_shape").get<Shape>(),
                  doc.value("feature_layer", std::string{}));
}

json serialize(const NetGraph& g, std::vector<float>* blob) {
  json doc;
  doc["layers"] = json::array();
  for (const LayerSpec& l : g.layers()) {
    json jl;
    jl["name"] = l.name;
    jl["kind"] = std::string(to_string(l.kind));
    json a = json::object();
    if (l.kind == LayerKind::kConv || l.kind == LayerKind::kDepthwiseConv ||
        l.kind == LayerKind::kMaxpool) {
      a["stride"] = l.stride;
      a["padding"] = l.padding;
    }
    if (l.kind == LayerKind::kMaxpool) a["kernel"] = l.kernel;
    if (l.bn) {
      a["mean"] = l.bn->mean;
      a["variance"] = l.bn->variance;
      a["gamma"] = l.bn->gamma;
      a["beta"] = l.bn->beta;
      a["epsilon"] = l.bn->epsilon;
    }
    jl["attrs"] = a;
    if (!l.weights.empty()) jl["weights"] = tensor_to_json(l.weights, blob);
    if (!l.bias.empty()) jl["bias"] = tensor_to_json(l.bias, blob);
    doc["layers"].push_back(std::move(jl));
  }
  doc["edges"] = json::array();
  for (const auto& [a, b] : g.edges()) doc["edges"].push_back({a, b});
  doc["input_shape"] = g.input_shape();
  if (!g.feature_layer_attr().empty()) doc["feature_layer"] = g.feature_layer_attr();
  return doc;
}

}  // namespace

NetGraph graph_from_json(const std::string& text, const std::string& base_dir) {
  try {
    return parse(json::parse(text), base_dir);
  } catch (const json::exception& e) {
    fail(ErrorCode::kSchema, std::string("graph schema violation: ") + e.what());
  }
}

std::string graph_to_json(const NetGraph& graph) { return serialize(graph, nullptr).dump(); }

NetGraph load_graph(const std::string& path) {
  const std::string text = read_file(path, "graph");
  return graph_from_json(text, std::filesystem::path(path).parent_path().string());
}

void save_graph(const NetGraph& graph, const std::string& path, bool sidecar) {
  std::vector<float> blob;
  json doc = serialize(graph, sidecar ? &blob : nullptr);
  if (sidecar) {
    const std::string blob_path = path + ".bin";
    doc["blob"] = std::filesystem::path(blob_path).filename().string();
    std::ofstream out(blob_path, std::ios::binary);
    require(out.good(), ErrorCode::kIo, "cannot write " + blob_path);
    out.write(reinterpret_cast<const char*>(blob.data()),
              static_cast<std::streamsize>(blob.size() * sizeof(float)));
  }
  std::ofstream out(path);
  require(out.good(), ErrorCode::kIo, "cannot write " + path);
  out << doc.dump(1) << '\n';
}

}  // namespace qft
