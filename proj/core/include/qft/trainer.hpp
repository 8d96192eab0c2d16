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
#include <functional>
#include <string>
#include <vector>

#include "qft/autodiff.hpp"
#include "qft/data.hpp"
#include "qft/dof.hpp"
#include "qft/graph.hpp"

namespace qft {

struct TrainConfig {
  int epochs = 12;
  std::size_t images_per_epoch = 8192;
  std::size_t batch_size = 16;
  double base_lr = 1e-4;
  /// Cosine segment length; each restart halves the amplitude.
  int restart_epochs = 4;
  /// Weight of the soft-target cross-entropy term.
  float ce_mix = 0.0f;
  std::uint64_t seed = 0;
  /// Stops early after this many steps when nonzero.
  std::size_t max_steps = 0;
  /// Batches (from sample index 0) used for the initial/final loss.
  std::size_t eval_batches = 4;
  /// Where to dump the DoF when the loss turns NaN; empty to skip.
  std::string divergence_snapshot;

  void validate() const;
  std::size_t steps_per_epoch() const;
  std::size_t total_steps() const;
};

double lr_at(std::size_t step, const TrainConfig& config);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig config = {});

  /// Applies one update from the parameters' accumulated gradients.
  void step(double lr);
  std::size_t steps() const noexcept { return t_; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

/// ||t - s||^2 / ||t||^2 with the teacher as a constant.
Var kd_loss(Tape& tape, const Tensor& teacher, Var student);
/// Cross-entropy against the teacher's softmax, averaged over the batch.
Var soft_cross_entropy(Tape& tape, const Tensor& teacher_logits, Var student_logits);
Var mixed_loss(Tape& tape, Var kd, Var ce, float lambda);

struct TrainReport {
  std::vector<double> loss_curve;
  std::vector<double> lr_curve;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::size_t steps = 0;
  double wall_seconds = 0.0;

  std::string to_json() const;
};

/// Mean loss of the student over `batches` fixed batches.
double evaluate_loss(const NetGraph& graph, DofSet& dof, const ImageSource& data,
                     const TrainConfig& config);

using StepCallback = std::function<void(std::size_t step, double loss)>;

/// Distills the FP graph (teacher) into the quantized student described by
/// `dof`, updating every trainable DoF jointly.
TrainReport train(const NetGraph& graph, DofSet& dof, const ImageSource& data,
                  const TrainConfig& config, const StepCallback& on_step = {});

}  // namespace qft
