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

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>

#include "qft/cle.hpp"
#include "qft/data.hpp"
#include "qft/dof.hpp"
#include "qft/error.hpp"
#include "qft/trainer.hpp"

namespace qft {

/// Process exit statuses of every command.
enum ExitCode : int {
  kExitOk = 0,
  kExitConformance = 1,
  kExitInput = 2,
  kExitNumeric = 3,
};

struct PipelineConfig {
  std::string graph;
  /// Directory of raw float32 samples; empty selects the synthetic source.
  std::string data_dir;
  std::string output_dir = "qft_out";
  HwConfig hw;
  TrainConfig train;
  MixtureConfig synthetic;

  bool fold = true;
  bool mixed_precision = true;
  bool cle = false;
  /// Re-fit activation ranges and rescale factors around the CLE factors.
  bool cle_recalibrate = false;
  bool finetune = true;
  bool verify = true;
  std::size_t calib_batches = 16;
  std::size_t calib_batch_size = 16;
  std::size_t verify_samples = 100;
  std::map<std::string, float> cle_beta;
  std::uint64_t seed = 0;
};

/// Parses a JSON config; absent keys keep their defaults.
PipelineConfig pipeline_config_from_json(const std::string& text);
PipelineConfig load_pipeline_config(const std::string& path);
std::string pipeline_config_to_json(const PipelineConfig& config);
/// QFT_SEED in the environment overrides the configured seed.
void apply_environment(PipelineConfig& config);

std::unique_ptr<ImageSource> make_source(const PipelineConfig& config, const NetGraph& graph);
std::vector<Tensor> calibration_batches(const PipelineConfig& config, const ImageSource& source);

/// Per-layer granularity report as CSV (one mmse row per layer, then one
/// range-ratio row per kernel slice).
std::string report_csv(const NetGraph& graph, const HwConfig& hw);

/// Maps a library error to an exit status.
int exit_code_for(ErrorCode code);

int cmd_fold(const PipelineConfig& config, const std::string& out_path);
int cmd_calibrate(const PipelineConfig& config, const std::string& out_path);
int cmd_init(const PipelineConfig& config, const std::string& snapshot_out);
int cmd_cle(const PipelineConfig& config, const std::string& factors_out,
            const std::string& snapshot_in, const std::string& snapshot_out);
int cmd_finetune(const PipelineConfig& config, const std::string& snapshot_in,
                 const std::string& snapshot_out, const std::string& report_out);
int cmd_export(const PipelineConfig& config, const std::string& snapshot_in,
               const std::string& bin_out, const std::string& manifest_out);
int cmd_verify(const PipelineConfig& config, const std::string& snapshot_in,
               const std::string& report_out);
int cmd_report(const PipelineConfig& config, const std::string& csv_out);
/// fold -> 8-bit selection -> calibrate -> init -> [cle] -> finetune ->
/// export -> verify, writing every artifact under output_dir.
int cmd_quantize(const PipelineConfig& config);

}  // namespace qft
