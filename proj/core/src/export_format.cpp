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

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <nlohmann/json.hpp>

#include "qft/deploy.hpp"
#include "qft/error.hpp"

namespace qft {

namespace {

constexpr std::uint8_t kMagic[4] = {'Q', 'F', 'T', 'X'};
constexpr std::uint32_t kVersion = 1;

void put(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  std::uint64_t get(std::size_t at, int bytes) const {
    require(at + static_cast<std::size_t>(bytes) <= b_.size(), ErrorCode::kSchema,
            "export payload truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b_[at + i]) << (8 * i);
    return v;
  }
  std::uint64_t next(int bytes) {
    const std::uint64_t v = get(pos_, bytes);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::string name(std::size_t n) {
    require(pos_ + n <= b_.size(), ErrorCode::kSchema, "export payload truncated");
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

struct Entry {
  std::uint64_t count = 0;
  std::uint64_t offset = 0;
};

}  // namespace

std::vector<std::uint8_t> export_to_bytes(const DeployExport& exp) {
  std::vector<std::uint8_t> head(std::begin(kMagic), std::end(kMagic));
  put(head, kVersion, 4);
  put(head, exp.layers.size(), 4);
  std::size_t table = head.size();
  for (const DeployLayer& l : exp.layers) table += 4 + l.name.size() + 6 * 8;

  std::vector<std::uint8_t> payload;
  for (const DeployLayer& l : exp.layers) {
    put(head, l.name.size(), 4);
    head.insert(head.end(), l.name.begin(), l.name.end());
    put(head, l.w_hat.size(), 8);
    put(head, table + payload.size(), 8);
    for (std::int32_t w : l.w_hat) put(payload, static_cast<std::uint32_t>(w), 4);
    put(head, l.b_hat.size(), 8);
    put(head, table + payload.size(), 8);
    for (std::int64_t b : l.b_hat) put(payload, static_cast<std::uint64_t>(b), 8);
    put(head, l.rescale.size(), 8);
    put(head, table + payload.size(), 8);
    for (float f : l.rescale) put(payload, std::bit_cast<std::uint32_t>(f), 4);
  }
  head.insert(head.end(), payload.begin(), payload.end());
  return head;
}

std::string export_manifest(const DeployExport& exp) {
  nlohmann::json j;
  j["format"] = "qft-deploy";
  j["version"] = kVersion;
  j["activation_bits"] = exp.activation_bits;
  j["activations_signed"] = exp.activations_signed;
  j["accumulator_bits"] = exp.accumulator_bits;
  j["input_shape"] = exp.input_shape;
  j["input_scale"] = exp.input_scale;
  j["input_zero_point"] = exp.input_zero_point;
  j["feature_layer"] = exp.feature_layer;
  j["layers"] = nlohmann::json::array();
  for (const DeployLayer& l : exp.layers) {
    nlohmann::json e;
    e["name"] = l.name;
    e["kind"] = std::string(to_string(l.kind));
    e["inputs"] = l.inputs;
    e["stride"] = l.stride;
    e["padding"] = l.padding;
    e["kernel"] = l.kernel;
    e["channels"] = l.channels;
    e["identity"] = l.identity;
    e["weight_bits"] = l.weight_bits;
    e["weight_shape"] = l.weight_shape;
    e["z_in"] = l.z_in;
    e["zero_point"] = l.zero_point;
    e["lo"] = l.lo;
    e["hi"] = l.hi;
    e["factors"] = l.factors;
    e["input_zero_points"] = l.input_zero_points;
    j["layers"].push_back(std::move(e));
  }
  return j.dump(1);
}

DeployExport export_from_bytes(std::span<const std::uint8_t> bytes, const std::string& manifest) {
  Reader r(bytes);
  for (std::uint8_t m : kMagic) {
    require(r.next(1) == m, ErrorCode::kSchema, "not a qft deployment export");
  }
  require(r.next(4) == kVersion, ErrorCode::kSchema, "unsupported export version");
  const std::size_t n = r.next(4);

  DeployExport exp;
  try {
    const nlohmann::json j = nlohmann::json::parse(manifest);
    require(j.at("layers").size() == n, ErrorCode::kSchema, "manifest and payload disagree");
    exp.activation_bits = j.at("activation_bits").get<int>();
    exp.activations_signed = j.at("activations_signed").get<bool>();
    exp.accumulator_bits = j.at("accumulator_bits").get<int>();
    exp.input_shape = j.at("input_shape").get<Shape>();
    exp.input_scale = j.at("input_scale").get<std::vector<float>>();
    exp.input_zero_point = j.at("input_zero_point").get<std::int32_t>();
    exp.feature_layer = j.at("feature_layer").get<std::string>();
    for (const nlohmann::json& e : j.at("layers")) {
      DeployLayer l;
      l.name = e.at("name").get<std::string>();
      l.kind = layer_kind_from_string(e.at("kind").get<std::string>());
      l.inputs = e.at("inputs").get<std::vector<std::size_t>>();
      l.stride = e.at("stride").get<std::size_t>();
      l.padding = e.at("padding").get<std::size_t>();
      l.kernel = e.at("kernel").get<std::size_t>();
      l.channels = e.at("channels").get<std::size_t>();
      l.identity = e.at("identity").get<bool>();
      l.weight_bits = e.at("weight_bits").get<int>();
      l.weight_shape = e.at("weight_shape").get<Shape>();
      l.z_in = e.at("z_in").get<std::int32_t>();
      l.zero_point = e.at("zero_point").get<std::int32_t>();
      l.lo = e.at("lo").get<std::vector<std::int32_t>>();
      l.hi = e.at("hi").get<std::vector<std::int32_t>>();
      l.factors = e.at("factors").get<std::vector<std::vector<float>>>();
      l.input_zero_points = e.at("input_zero_points").get<std::vector<std::int32_t>>();
      exp.layers.push_back(std::move(l));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kSchema, std::string("export manifest schema violation: ") + e.what());
  }

  for (DeployLayer& l : exp.layers) {
    const std::size_t len = r.next(4);
    require(r.name(len) == l.name, ErrorCode::kSchema, "manifest and payload disagree on layer order");
    Entry w{r.next(8), r.next(8)};
    Entry b{r.next(8), r.next(8)};
    Entry f{r.next(8), r.next(8)};
    l.w_hat.resize(w.count);
    for (std::size_t i = 0; i < w.count; ++i) {
      l.w_hat[i] = static_cast<std::int32_t>(static_cast<std::uint32_t>(r.get(w.offset + 4 * i, 4)));
    }
    l.b_hat.resize(b.count);
    for (std::size_t i = 0; i < b.count; ++i) {
      l.b_hat[i] = static_cast<std::int64_t>(r.get(b.offset + 8 * i, 8));
    }
    l.rescale.resize(f.count);
    for (std::size_t i = 0; i < f.count; ++i) {
      l.rescale[i] = std::bit_cast<float>(static_cast<std::uint32_t>(r.get(f.offset + 4 * i, 4)));
    }
  }
  validate_export(exp);
  return exp;
}

void save_export(const DeployExport& exp, const std::string& bin_path,
                 const std::string& manifest_path) {
  const std::vector<std::uint8_t> bytes = export_to_bytes(exp);
  std::ofstream bin(bin_path, std::ios::binary);
  require(bin.good(), ErrorCode::kIo, "cannot write " + bin_path);
  bin.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  std::ofstream man(manifest_path);
  require(man.good(), ErrorCode::kIo, "cannot write " + manifest_path);
  man << export_manifest(exp) << '\n';
}

DeployExport load_export(const std::string& bin_path, const std::string& manifest_path) {
  std::ifstream bin(bin_path, std::ios::binary);
  require(bin.good(), ErrorCode::kNotFound, "export not found: " + bin_path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(bin)),
                                        std::istreambuf_iterator<char>());
  std::ifstream man(manifest_path);
  require(man.good(), ErrorCode::kNotFound, "manifest not found: " + manifest_path);
  std::ostringstream ss;
  ss << man.rdbuf();
  return export_from_bytes(bytes, ss.str());
}

}  // namespace qft
