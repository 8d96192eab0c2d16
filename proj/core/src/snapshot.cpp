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

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "qft/dof.hpp"
#include "qft/error.hpp"

namespace qft {

namespace {

using nlohmann::json;

json hw_to_json(const HwConfig& hw) {
  json j;
  j["rescale_rank"] = hw.rescale_rank == RescaleRank::kLayerwise ? "layerwise" : "channelwise";
  j["weight_bits"] = hw.weight_bits;
  j["activation_bits"] = hw.activation_bits;
  j["activations_signed"] = hw.activations_signed;
  j["accumulator_bits"] = hw.accumulator_bits;
  j["activation_quant_enabled"] = hw.activation_quant_enabled;
  j["parameterization"] = hw.parameterization == Parameterization::kActivationScales
                              ? "activation_scales"
                              : "dual_scales";
  j["layer_weight_bits"] = hw.layer_weight_bits;
  return j;
}

HwConfig hw_from_json(const json& j) {
  HwConfig hw;
  const std::string rank = j.value("rescale_rank", std::string("layerwise"));
  require(rank == "layerwise" || rank == "channelwise", ErrorCode::kSchema,
          "rescale_rank must be 'layerwise' or 'channelwise'");
  hw.rescale_rank = rank == "layerwise" ? RescaleRank::kLayerwise : RescaleRank::kChannelwise;
  hw.weight_bits = j.value("weight_bits", hw.weight_bits);
  hw.activation_bits = j.value("activation_bits", hw.activation_bits);
  hw.activations_signed = j.value("activations_signed", hw.activations_signed);
  hw.accumulator_bits = j.value("accumulator_bits", hw.accumulator_bits);
  hw.activation_quant_enabled = j.value("activation_quant_enabled", hw.activation_quant_enabled);
  const std::string param = j.value("parameterization", std::string("activation_scales"));
  require(param == "activation_scales" || param == "dual_scales", ErrorCode::kSchema,
          "parameterization must be 'activation_scales' or 'dual_scales'");
  hw.parameterization = param == "activation_scales" ? Parameterization::kActivationScales
                                                     : Parameterization::kDualScales;
  if (j.contains("layer_weight_bits")) {
    hw.layer_weight_bits = j.at("layer_weight_bits").get<std::map<std::string, int>>();
  }
  return hw;
}

void fill(Parameter& p, const json& j, const std::string& ctx) {
  std::vector<float> v = j.get<std::vector<float>>();
  require(v.size() == p.value.numel(), ErrorCode::kSchema,
          ctx + ": expected " + std::to_string(p.value.numel()) + " values, got " +
              std::to_string(v.size()));
  p.value = Tensor::from_external(p.value.shape(), std::move(v));
}

}  // namespace

std::string hw_config_to_json(const HwConfig& hw) { return hw_to_json(hw).dump(1); }

HwConfig hw_config_from_json(const std::string& text) {
  try {
    return hw_from_json(json::parse(text));
  } catch (const json::exception& e) {
    fail(ErrorCode::kSchema, std::string("hardware config schema violation: ") + e.what());
  }
}

std::string snapshot_to_json(const DofSet& dof) {
  json doc;
  doc["version"] = 1;
  doc["hw"] = hw_to_json(dof.hw);
  doc["trainable"] = {{"weights", dof.flags.weights},
                      {"biases", dof.flags.biases},
                      {"activation_scales", dof.flags.activation_scales},
                      {"rescale", dof.flags.rescale}};
  doc["groups"] = json::array();
  for (const ActGroup& g : dof.groups) {
    doc["groups"].push_back({{"name", g.name},
                             {"scale", g.scale.value.values()},
                             {"zero_point", g.zero_point},
                             {"frozen", g.frozen}});
  }
  doc["layers"] = json::array();
  for (const LayerDof& d : dof.layers) {
    json l;
    l["name"] = d.name;
    l["weight"] = d.weight.value.values();
    l["bias"] = d.bias.value.values();
    l["rescale"] = d.rescale.value.values();
    if (dof.hw.parameterization == Parameterization::kDualScales) {
      l["left"] = d.left.value.values();
      l["right"] = d.right.value.values();
    }
    doc["layers"].push_back(std::move(l));
  }
  return doc.dump(1);
}

DofSet snapshot_from_json(const std::string& text, const NetGraph& graph) {
  try {
    const json doc = json::parse(text);
    require(doc.is_object() && doc.value("version", 0) == 1, ErrorCode::kSchema,
            "unsupported snapshot version");
    DofSet dof = analyze_dof(graph, hw_from_json(doc.at("hw")));
    if (doc.contains("trainable")) {
      const json& t = doc.at("trainable");
      dof.flags.weights = t.value("weights", true);
      dof.flags.biases = t.value("biases", true);
      dof.flags.activation_scales = t.value("activation_scales", true);
      dof.flags.rescale = t.value("rescale", true);
    }
    const json& groups = doc.at("groups");
    require(groups.size() == dof.groups.size(), ErrorCode::kSchema,
            "snapshot group count does not match the graph");
    for (std::size_t g = 0; g < groups.size(); ++g) {
      ActGroup& grp = dof.groups[g];
      require(groups[g].at("name").get<std::string>() == grp.name, ErrorCode::kSchema,
              "snapshot group '" + groups[g].at("name").get<std::string>() +
                  "' does not match the graph");
      fill(grp.scale, groups[g].at("scale"), "group '" + grp.name + "'");
      grp.zero_point = groups[g].at("zero_point").get<float>();
    }
    const json& layers = doc.at("layers");
    require(layers.size() == dof.layers.size(), ErrorCode::kSchema,
            "snapshot layer count does not match the graph");
    for (std::size_t k = 0; k < layers.size(); ++k) {
      LayerDof& d = dof.layers[k];
      const json& l = layers[k];
      require(l.at("name").get<std::string>() == d.name, ErrorCode::kSchema,
              "snapshot layer order does not match the graph");
      const std::string ctx = "layer '" + d.name + "'";
      fill(d.weight, l.at("weight"), ctx);
      fill(d.bias, l.at("bias"), ctx);
      fill(d.rescale, l.at("rescale"), ctx);
      if (l.contains("left")) fill(d.left, l.at("left"), ctx);
      if (l.contains("right")) fill(d.right, l.at("right"), ctx);
    }
    dof.apply_trainable();
    return dof;
  } catch (const json::exception& e) {
    fail(ErrorCode::kSchema, std::string("snapshot schema violation: ") + e.what());
  }
}

void save_snapshot(const DofSet& dof, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::kIo, "cannot write " + path);
  out << snapshot_to_json(dof) << '\n';
}

DofSet load_snapshot(const std::string& path, const NetGraph& graph) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::kNotFound, "snapshot not found: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return snapshot_from_json(ss.str(), graph);
}

}  // namespace qft
