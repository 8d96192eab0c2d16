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

#include "qft/pipeline.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "qft/deploy.hpp"
#include "qft/error.hpp"
#include "qft/solvers.hpp"

namespace qft {

namespace {

using nlohmann::json;

std::string read_text(const std::string& path, const std::string& what) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::kNotFound, what + " not found: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::kIo, "cannot write " + path);
  out << text;
  if (text.empty() || text.back() != '\n') out << '\n';
}

int run_stage(const std::string& stage, const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    std::cerr << "qft: stage '" << stage << "' failed: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "qft: stage '" << stage << "' failed: " << e.what() << '\n';
    return kExitInput;
  }
}

NetGraph prepared_graph(const PipelineConfig& config) {
  require(!config.graph.empty(), ErrorCode::kNotFound, "graph not found: no graph path given");
  NetGraph g = load_graph(config.graph);
  return config.fold ? fold_batchnorm(g) : g;
}

HwConfig prepared_hw(const PipelineConfig& config, const NetGraph& graph) {
  HwConfig hw = config.hw;
  if (config.mixed_precision) {
    for (const std::string& name : select_8b_layers(graph)) hw.layer_weight_bits.try_emplace(name, 8);
  }
  hw.validate();
  return hw;
}

std::vector<Tensor> verify_batches(const PipelineConfig& config, const ImageSource& source) {
  std::vector<Tensor> out;
  constexpr std::size_t kChunk = 20;
  // Past the training indices so conformance sees unseen inputs.
  const std::size_t base = source.size() / 2;
  for (std::size_t done = 0; done < config.verify_samples; done += kChunk) {
    out.push_back(source.batch(base + done, std::min(kChunk, config.verify_samples - done)));
  }
  return out;
}

std::string path_in(const PipelineConfig& config, const std::string& file) {
  return (std::filesystem::path(config.output_dir) / file).string();
}

}  // namespace

PipelineConfig pipeline_config_from_json(const std::string& text) {
  PipelineConfig c;
  try {
    const json j = json::parse(text);
    c.graph = j.value("graph", c.graph);
    c.data_dir = j.value("data_dir", c.data_dir);
    c.output_dir = j.value("output_dir", c.output_dir);
    if (j.contains("hw")) c.hw = hw_config_from_json(j.at("hw").dump());
    if (j.contains("train")) {
      const json& t = j.at("train");
      c.train.epochs = t.value("epochs", c.train.epochs);
      c.train.images_per_epoch = t.value("images_per_epoch", c.train.images_per_epoch);
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.base_lr = t.value("base_lr", c.train.base_lr);
      c.train.restart_epochs = t.value("restart_epochs", c.train.restart_epochs);
      c.train.ce_mix = t.value("ce_mix", c.train.ce_mix);
      c.train.max_steps = t.value("max_steps", c.train.max_steps);
      c.train.eval_batches = t.value("eval_batches", c.train.eval_batches);
    }
    if (j.contains("synthetic")) {
      const json& s = j.at("synthetic");
      c.synthetic.components = s.value("components", c.synthetic.components);
      c.synthetic.size = s.value("size", c.synthetic.size);
      c.synthetic.mean_scale = s.value("mean_scale", c.synthetic.mean_scale);
      c.synthetic.noise = s.value("noise", c.synthetic.noise);
      c.synthetic.channel_gain = s.value("channel_gain", c.synthetic.channel_gain);
    }
    if (j.contains("stages")) {
      const json& s = j.at("stages");
      c.fold = s.value("fold", c.fold);
      c.mixed_precision = s.value("mixed_precision", c.mixed_precision);
      c.cle = s.value("cle", c.cle);
      c.cle_recalibrate = s.value("cle_recalibrate", c.cle_recalibrate);
      c.finetune = s.value("finetune", c.finetune);
      c.verify = s.value("verify", c.verify);
    }
    c.calib_batches = j.value("calib_batches", c.calib_batches);
    c.calib_batch_size = j.value("calib_batch_size", c.calib_batch_size);
    c.verify_samples = j.value("verify_samples", c.verify_samples);
    if (j.contains("cle_beta")) c.cle_beta = j.at("cle_beta").get<std::map<std::string, float>>();
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    fail(ErrorCode::kSchema, std::string("config schema violation: ") + e.what());
  }
  c.train.seed = c.seed;
  return c;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  return pipeline_config_from_json(read_text(path, "config"));
}

std::string pipeline_config_to_json(const PipelineConfig& c) {
  json j;
  j["graph"] = c.graph;
  j["data_dir"] = c.data_dir;
  j["output_dir"] = c.output_dir;
  j["hw"] = json::parse(hw_config_to_json(c.hw));
  j["train"] = {{"epochs", c.train.epochs},
                {"images_per_epoch", c.train.images_per_epoch},
                {"batch_size", c.train.batch_size},
                {"base_lr", c.train.base_lr},
                {"restart_epochs", c.train.restart_epochs},
                {"ce_mix", c.train.ce_mix},
                {"max_steps", c.train.max_steps},
                {"eval_batches", c.train.eval_batches}};
  j["synthetic"] = {{"components", c.synthetic.components},
                    {"size", c.synthetic.size},
                    {"mean_scale", c.synthetic.mean_scale},
                    {"noise", c.synthetic.noise},
                    {"channel_gain", c.synthetic.channel_gain}};
  j["stages"] = {{"fold", c.fold},
                 {"mixed_precision", c.mixed_precision},
                 {"cle", c.cle},
                 {"cle_recalibrate", c.cle_recalibrate},
                 {"finetune", c.finetune},
                 {"verify", c.verify}};
  j["calib_batches"] = c.calib_batches;
  j["calib_batch_size"] = c.calib_batch_size;
  j["verify_samples"] = c.verify_samples;
  j["cle_beta"] = c.cle_beta;
  j["seed"] = c.seed;
  return j.dump(1);
}

void apply_environment(PipelineConfig& config) {
  if (const char* s = std::getenv("QFT_SEED"); s != nullptr && *s != '\0') {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s, &end, 10);
    require(end != nullptr && *end == '\0', ErrorCode::kInvalidArgument,
            std::string("QFT_SEED is not an unsigned integer: ") + s);
    config.seed = v;
  }
  config.train.seed = config.seed;
}

std::unique_ptr<ImageSource> make_source(const PipelineConfig& config, const NetGraph& graph) {
  if (!config.data_dir.empty()) {
    return std::make_unique<RawTensorDirectory>(config.data_dir, graph.input_shape());
  }
  MixtureConfig m = config.synthetic;
  m.shape = graph.input_shape();
  m.seed = config.seed;
  if (!m.channel_gain.empty() && m.channel_gain.size() != m.shape[0]) m.channel_gain.clear();
  return std::make_unique<GaussianMixtureSource>(std::move(m));
}

std::vector<Tensor> calibration_batches(const PipelineConfig& config, const ImageSource& source) {
  std::vector<Tensor> out;
  for (std::size_t k = 0; k < config.calib_batches; ++k) {
    out.push_back(source.batch(k * config.calib_batch_size, config.calib_batch_size));
  }
  return out;
}

std::string report_csv(const NetGraph& graph, const HwConfig& hw) {
  std::ostringstream out;
  out << "layer,kind,row,slice,layerwise_mse,channelwise_mse,doubly_channelwise_mse,range_ratio\n";
  for (std::size_t i : graph.weighted_layers()) {
    const LayerSpec& l = graph.layer(i);
    const MmseReport r = mmse_report(l.weights, kernel_view(l), hw.weight_spec(l.name));
    const std::string kind(to_string(l.kind));
    out << l.name << ',' << kind << ",summary,," << r.layerwise_mse << ',' << r.channelwise_mse
        << ',' << r.doubly_channelwise_mse << ',' << r.layerwise_range_ratio << '\n';
    for (std::size_t s = 0; s < r.slice_range_ratio.size(); ++s) {
      out << l.name << ',' << kind << ",slice," << s << ",,,," << r.slice_range_ratio[s] << '\n';
    }
  }
  return out.str();
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNumeric:
    case ErrorCode::kNonFinite: return kExitNumeric;
    default: return kExitInput;
  }
}

int cmd_fold(const PipelineConfig& config, const std::string& out_path) {
  return run_stage("fold", [&] {
    const NetGraph g = fold_batchnorm(load_graph(config.graph));
    save_graph(g, out_path);
    return kExitOk;
  });
}

int cmd_calibrate(const PipelineConfig& config, const std::string& out_path) {
  return run_stage("calibrate", [&] {
    const NetGraph g = prepared_graph(config);
    const auto src = make_source(config, g);
    const std::vector<Tensor> calib = calibration_batches(config, *src);
    json j = json::object();
    for (const auto& [name, s] : calibrate_activations(g, calib)) {
      j[name] = {{"min", s.min}, {"max", s.max}};
    }
    write_text(out_path, j.dump(1));
    return kExitOk;
  });
}

int cmd_init(const PipelineConfig& config, const std::string& snapshot_out) {
  return run_stage("init", [&] {
    const NetGraph g = prepared_graph(config);
    const auto src = make_source(config, g);
    const DofSet dof = init_quantization(g, prepared_hw(config, g), calibration_batches(config, *src));
    save_snapshot(dof, snapshot_out);
    return kExitOk;
  });
}

int cmd_cle(const PipelineConfig& config, const std::string& factors_out,
            const std::string& snapshot_in, const std::string& snapshot_out) {
  return run_stage("cle", [&] {
    const NetGraph g = prepared_graph(config);
    CleOptions opt;
    opt.beta = config.cle_beta;
    const CleFactors f = cle_factors_4b(g, prepared_hw(config, g), opt);
    if (!factors_out.empty()) write_text(factors_out, cle_factors_to_json(f));
    if (!snapshot_in.empty()) {
      DofSet dof = load_snapshot(snapshot_in, g);
      if (config.cle_recalibrate) {
        const auto src = make_source(config, g);
        apply_cle_recalibrated(dof, g, f, calibration_batches(config, *src));
      } else {
        apply_cle_as_scales(dof, g, f);
      }
      save_snapshot(dof, snapshot_out.empty() ? snapshot_in : snapshot_out);
    }
    return kExitOk;
  });
}

int cmd_finetune(const PipelineConfig& config, const std::string& snapshot_in,
                 const std::string& snapshot_out, const std::string& report_out) {
  return run_stage("finetune", [&] {
    const NetGraph g = prepared_graph(config);
    DofSet dof = load_snapshot(snapshot_in, g);
    const auto src = make_source(config, g);
    TrainConfig tc = config.train;
    tc.divergence_snapshot = snapshot_out + ".diverged";
    const TrainReport r = train(g, dof, *src, tc);
    save_snapshot(dof, snapshot_out);
    if (!report_out.empty()) write_text(report_out, r.to_json());
    return kExitOk;
  });
}

int cmd_export(const PipelineConfig& config, const std::string& snapshot_in,
               const std::string& bin_out, const std::string& manifest_out) {
  return run_stage("export", [&] {
    const NetGraph g = prepared_graph(config);
    DofSet dof = load_snapshot(snapshot_in, g);
    save_export(export_dof(g, dof), bin_out, manifest_out);
    return kExitOk;
  });
}

int cmd_verify(const PipelineConfig& config, const std::string& snapshot_in,
               const std::string& report_out) {
  return run_stage("verify", [&] {
    const NetGraph g = prepared_graph(config);
    DofSet dof = load_snapshot(snapshot_in, g);
    const auto src = make_source(config, g);
    const ConformanceReport r = check_exact(g, dof, verify_batches(config, *src));
    if (!report_out.empty()) write_text(report_out, r.to_json());
    if (!r.passed()) {
      std::cerr << "qft: stage 'verify' failed: simulation and integer pipeline disagree\n";
      return static_cast<int>(kExitConformance);
    }
    return static_cast<int>(kExitOk);
  });
}

int cmd_report(const PipelineConfig& config, const std::string& csv_out) {
  return run_stage("report", [&] {
    const NetGraph g = prepared_graph(config);
    const std::string csv = report_csv(g, prepared_hw(config, g));
    if (csv_out.empty() || csv_out == "-") {
      std::cout << csv;
    } else {
      write_text(csv_out, csv);
    }
    return kExitOk;
  });
}

int cmd_quantize(const PipelineConfig& config) {
  NetGraph graph;
  HwConfig hw;
  std::unique_ptr<ImageSource> src;
  DofSet dof;
  int rc = run_stage("load", [&] {
    std::filesystem::create_directories(config.output_dir);
    graph = prepared_graph(config);
    hw = prepared_hw(config, graph);
    src = make_source(config, graph);
    save_graph(graph, path_in(config, "graph.json"));
    write_text(path_in(config, "config.json"), pipeline_config_to_json(config));
    return kExitOk;
  });
  if (rc != kExitOk) return rc;

  std::vector<Tensor> calib;
  rc = run_stage("init", [&] {
    calib = calibration_batches(config, *src);
    dof = init_quantization(graph, hw, calib);
    save_snapshot(dof, path_in(config, "snapshot_init.json"));
    return kExitOk;
  });
  if (rc != kExitOk) return rc;

  if (config.cle) {
    rc = run_stage("cle", [&] {
      CleOptions opt;
      opt.beta = config.cle_beta;
      const CleFactors f = cle_factors_4b(graph, hw, opt);
      write_text(path_in(config, "cle.json"), cle_factors_to_json(f));
      if (config.cle_recalibrate) {
        apply_cle_recalibrated(dof, graph, f, calib);
      } else {
        apply_cle_as_scales(dof, graph, f);
      }
      return kExitOk;
    });
    if (rc != kExitOk) return rc;
  }

  if (config.finetune) {
    rc = run_stage("finetune", [&] {
      TrainConfig tc = config.train;
      tc.divergence_snapshot = path_in(config, "snapshot_diverged.json");
      const TrainReport r = train(graph, dof, *src, tc);
      write_text(path_in(config, "train_report.json"), r.to_json());
      return kExitOk;
    });
    if (rc != kExitOk) return rc;
  }

  rc = run_stage("export", [&] {
    save_snapshot(dof, path_in(config, "snapshot.json"));
    if (!hw.activation_quant_enabled) {
      std::cerr << "qft: activation quantization disabled; skipping integer export\n";
      return kExitOk;
    }
    save_export(export_dof(graph, dof), path_in(config, "export.bin"), path_in(config, "export.json"));
    return kExitOk;
  });
  if (rc != kExitOk || !config.verify || !hw.activation_quant_enabled) return rc;

  return run_stage("verify", [&] {
    const ConformanceReport r = check_exact(graph, dof, verify_batches(config, *src));
    write_text(path_in(config, "conformance.json"), r.to_json());
    if (!r.passed()) {
      std::cerr << "qft: stage 'verify' failed: simulation and integer pipeline disagree\n";
      return static_cast<int>(kExitConformance);
    }
    return static_cast<int>(kExitOk);
  });
}

}  // namespace qft
