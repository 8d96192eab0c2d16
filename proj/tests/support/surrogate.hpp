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

#include <cstddef>
#include <vector>

#include "qft/dof.hpp"
#include "qft/graph.hpp"

namespace qft::testing {

/// Double-precision copy of every DoF value of a DofSet.
struct SurrogateParams {
  std::vector<std::vector<double>> weight, bias, rescale;  ///< by DofSet::layers index
  std::vector<std::vector<double>> scale;                  ///< by group

  static SurrogateParams from(const DofSet& dof);
};

/// Independent reference of the student KD loss in which every rounding is
/// replaced by the identity plus a constant offset, and every clip by a
/// constant mask, both frozen at the point where `record` was called.
/// Supports input, conv, depthwise, dense (with fused relu), global avgpool
/// and output layers under the activation-scale parameterization.
class SurrogateLoss {
 public:
  SurrogateLoss(const NetGraph& graph, const DofSet& dof, Tensor input, Tensor teacher_features);

  /// Evaluates with true rounding at `p` and freezes offsets and masks.
  double record(const SurrogateParams& p);
  /// Evaluates the frozen surrogate.
  double operator()(const SurrogateParams& p) const;

  /// Pre-rounding kernel ratios of the last recorded point, per layer.
  const std::vector<std::vector<double>>& kernel_ratios() const { return ratios_; }

 private:
  struct Site {
    double offset = 0.0;
    double clipped = 0.0;
    bool pass = true;
  };

  double run(const SurrogateParams& p, bool recording) const;
  /// `decide` is the value whose rounding fixes the site (the float32 value
  /// the quantizer sees); the offset is taken relative to `v`.
  double round_site(double v, double lo, double hi, bool recording) const {
    return round_site(v, v, lo, hi, recording);
  }
  double round_site(double v, double decide, double lo, double hi, bool recording) const;

  const NetGraph& graph_;
  const DofSet& dof_;
  Tensor input_;
  Tensor teacher_;
  mutable std::vector<Site> sites_;
  mutable std::size_t cursor_ = 0;
  mutable std::vector<std::vector<double>> ratios_;
};

}  // namespace qft::testing
