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

#include <map>
#include <span>
#include <string>
#include <vector>

#include "qft/dof.hpp"
#include "qft/graph.hpp"

namespace qft {

/// Cross-layer factors keyed by the activation group (producer layer name).
/// Convention: the producer's output channel m is scaled by C_m and the
/// consumers' input channel m by 1/C_m.
struct CleFactors {
  std::map<std::string, std::vector<float>> factors;
  std::map<std::string, float> beta;
  float alpha_a = 1.0f;
  float alpha_w = 1.0f;
  /// Re-fit the producer's scalar weight scale to the equalized kernel.
  bool refit_alpha_w = false;
};

struct CleOptions {
  /// Per-interface beta overrides (by producer name).
  std::map<std::string, float> beta;
  int ppq_iterations = 10;
};

/// Interfaces eligible for equalization: trainable groups produced by a
/// weighted layer and read only through homogeneous, channel-preserving
/// layers by weighted or ew_add consumers.
std::vector<std::string> cle_interfaces(const NetGraph& graph, const HwConfig& hw);

CleFactors cle_factors_4b(const NetGraph& graph, const HwConfig& hw,
                          const CleOptions& options = {});

/// Installs the factors as activation-scale ratios: S_a[m] <- alpha_a * S_a[m] / C[m].
void apply_cle_as_scales(DofSet& dof, const NetGraph& graph, const CleFactors& factors);

/// Installs the factors as activation-scale ratios and re-fits, per equalized
/// interface, the scalar activation range (from per-channel calibration
/// ranges times C) and the rescale factors of the adjacent layers (from the
/// scalar MMSE scale of the equalized kernels). Equivalent to equalizing the
/// weights and re-running the initialization, but keeps the original graph.
/// Meant for a freshly initialized DofSet; ignores alpha_a / alpha_w.
void apply_cle_recalibrated(DofSet& dof, const NetGraph& graph, const CleFactors& factors,
                            std::span<const Tensor> calib_samples);

/// Weight pre-conditioning: producer output channel *C, consumer input channel /C.
NetGraph apply_cle_to_weights(const NetGraph& graph, const CleFactors& factors);

std::string cle_factors_to_json(const CleFactors& factors);
CleFactors cle_factors_from_json(const std::string& text);

}  // namespace qft
