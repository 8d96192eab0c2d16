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

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "qft/error.hpp"
#include "qft/pipeline.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::string> graph, data_dir, output_dir, rescale, beta_map;
  std::optional<int> weight_bits, activation_bits, accumulator_bits, epochs;
  std::optional<std::size_t> images_per_epoch, batch_size, max_steps, verify_samples;
  std::optional<double> lr;
  std::optional<float> ce_mix;
  std::optional<std::uint64_t> seed;
  bool no_train = false, cle = false, cle_recalibrate = false;
  bool no_fold = false, no_mixed = false, no_verify = false;
  bool signed_acts = false, weight_only = false, dual = false;
};

void add_common(CLI::App& app, Overrides& o) {
  app.add_option("--config", o.config, "JSON pipeline config");
  app.add_option("--graph", o.graph, "Graph JSON");
  app.add_option("--data-dir", o.data_dir, "Directory of raw float32 samples (default: synthetic)");
  app.add_option("--out", o.output_dir, "Output directory");
  app.add_option("--seed", o.seed, "Seed (QFT_SEED overrides)");
  app.add_option("--weight-bits", o.weight_bits, "Default weight bit-width");
  app.add_option("--activation-bits", o.activation_bits, "Activation bit-width");
  app.add_option("--accumulator-bits", o.accumulator_bits, "Accumulator bit-width");
  app.add_option("--rescale", o.rescale, "layerwise | channelwise")
      ->check(CLI::IsMember({"layerwise", "channelwise"}));
  app.add_flag("--dual-scales", o.dual, "Left/right kernel scale parameterization");
  app.add_flag("--signed-activations", o.signed_acts, "Symmetric signed activations");
  app.add_flag("--weight-only", o.weight_only, "Disable activation quantization");
  app.add_option("--epochs", o.epochs, "Training epochs");
  app.add_option("--images-per-epoch", o.images_per_epoch, "Images per epoch");
  app.add_option("--batch-size", o.batch_size, "Batch size");
  app.add_option("--lr", o.lr, "Base learning rate");
  app.add_option("--ce-mix", o.ce_mix, "Soft cross-entropy weight in [0,1]");
  app.add_option("--max-steps", o.max_steps, "Stop after this many steps");
  app.add_option("--verify-samples", o.verify_samples, "Inputs used by the conformance check");
  app.add_option("--beta-map", o.beta_map, "JSON object of per-interface CLE beta");
  app.add_flag("--no-train", o.no_train, "Skip finetuning (init baseline)");
  app.add_flag("--cle", o.cle, "Initialize scales with cross-layer equalization");
  app.add_flag("--cle-recalibrate", o.cle_recalibrate,
               "With --cle, re-fit activation ranges and rescale factors to the equalized net");
  app.add_flag("--no-fold", o.no_fold, "Do not fold batchnorm");
  app.add_flag("--no-mixed-precision", o.no_mixed, "Keep every layer at the default weight bits");
  app.add_flag("--no-verify", o.no_verify, "Skip the conformance check");
}

qft::PipelineConfig resolve(const Overrides& o) {
  qft::PipelineConfig c = o.config.empty() ? qft::PipelineConfig{} : qft::load_pipeline_config(o.config);
  if (o.graph) c.graph = *o.graph;
  if (o.data_dir) c.data_dir = *o.data_dir;
  if (o.output_dir) c.output_dir = *o.output_dir;
  if (o.seed) c.seed = *o.seed;
  if (o.weight_bits) c.hw.weight_bits = *o.weight_bits;
  if (o.activation_bits) c.hw.activation_bits = *o.activation_bits;
  if (o.accumulator_bits) c.hw.accumulator_bits = *o.accumulator_bits;
  if (o.rescale) {
    c.hw.rescale_rank = *o.rescale == "layerwise" ? qft::RescaleRank::kLayerwise
                                                  : qft::RescaleRank::kChannelwise;
  }
  if (o.dual) c.hw.parameterization = qft::Parameterization::kDualScales;
  if (o.signed_acts) c.hw.activations_signed = true;
  if (o.weight_only) c.hw.activation_quant_enabled = false;
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.images_per_epoch) c.train.images_per_epoch = *o.images_per_epoch;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (o.lr) c.train.base_lr = *o.lr;
  if (o.ce_mix) c.train.ce_mix = *o.ce_mix;
  if (o.max_steps) c.train.max_steps = *o.max_steps;
  if (o.verify_samples) c.verify_samples = *o.verify_samples;
  if (o.beta_map) {
    c.cle_beta = qft::cle_factors_from_json("{\"factors\":{},\"beta\":" + *o.beta_map + "}").beta;
  }
  if (o.no_train) c.finetune = false;
  if (o.cle) c.cle = true;
  if (o.cle_recalibrate) c.cle_recalibrate = true;
  if (o.no_fold) c.fold = false;
  if (o.no_mixed) c.mixed_precision = false;
  if (o.no_verify) c.verify = false;
  c.train.seed = c.seed;
  qft::apply_environment(c);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qft: quantization finetuning of all degrees of freedom"};
  app.require_subcommand(1);
  Overrides o;
  std::string out_file, snapshot, snapshot_out, report, bin, manifest;

  auto* fold = app.add_subcommand("fold", "Fold batchnorm layers into their producers");
  add_common(*fold, o);
  fold->add_option("-o,--output", out_file, "Folded graph JSON")->required();

  auto* calib = app.add_subcommand("calibrate", "Record per-layer activation ranges");
  add_common(*calib, o);
  calib->add_option("-o,--output", out_file, "Range JSON")->required();

  auto* init = app.add_subcommand("init", "Initialize every quantization DoF");
  add_common(*init, o);
  init->add_option("-o,--output", out_file, "DoF snapshot")->required();

  auto* cle = app.add_subcommand("cle", "Compute cross-layer equalization factors");
  add_common(*cle, o);
  cle->add_option("-o,--output", out_file, "Factor JSON");
  cle->add_option("--snapshot", snapshot, "Snapshot to re-initialize with the factors");
  cle->add_option("--snapshot-out", snapshot_out, "Where to write the updated snapshot");

  auto* ft = app.add_subcommand("finetune", "Distill the FP graph into the quantized student");
  add_common(*ft, o);
  ft->add_option("--snapshot", snapshot, "Initial DoF snapshot")->required();
  ft->add_option("-o,--output", snapshot_out, "Finetuned snapshot")->required();
  ft->add_option("--report", report, "Training report JSON");

  auto* ex = app.add_subcommand("export", "Write integer deployment artifacts");
  add_common(*ex, o);
  ex->add_option("--snapshot", snapshot, "DoF snapshot")->required();
  ex->add_option("--bin", bin, "Binary payload")->required();
  ex->add_option("--manifest", manifest, "JSON manifest")->required();

  auto* ver = app.add_subcommand("verify", "Compare simulation and integer pipeline bit-for-bit");
  add_common(*ver, o);
  ver->add_option("--snapshot", snapshot, "DoF snapshot")->required();
  ver->add_option("--report", report, "Conformance report JSON");

  auto* rep = app.add_subcommand("report", "Per-layer kernel error across scale granularity (CSV)");
  add_common(*rep, o);
  rep->add_option("-o,--output", out_file, "CSV path (default: stdout)");

  auto* quant = app.add_subcommand("quantize", "Run the whole pipeline");
  add_common(*quant, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : qft::kExitInput;
  }

  qft::PipelineConfig c;
  try {
    c = resolve(o);
  } catch (const qft::Error& e) {
    std::cerr << "qft: " << e.what() << '\n';
    return qft::exit_code_for(e.code());
  }

  if (*fold) return qft::cmd_fold(c, out_file);
  if (*calib) return qft::cmd_calibrate(c, out_file);
  if (*init) return qft::cmd_init(c, out_file);
  if (*cle) return qft::cmd_cle(c, out_file, snapshot, snapshot_out);
  if (*ft) return qft::cmd_finetune(c, snapshot, snapshot_out, report);
  if (*ex) return qft::cmd_export(c, snapshot, bin, manifest);
  if (*ver) return qft::cmd_verify(c, snapshot, report);
  if (*rep) return qft::cmd_report(c, out_file);
  return qft::cmd_quantize(c);
}
