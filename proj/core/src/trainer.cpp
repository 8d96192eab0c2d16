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

#include "qft/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "qft/error.hpp"

namespace qft {

namespace {

struct TeacherOut {
  Tensor features;
  Tensor logits;
};

TeacherOut teacher_forward(const NetGraph& graph, const Tensor& x) {
  Tape tape;
  tape.set_grad_enabled(false);
  const std::vector<Var> out = fp_forward(tape, graph, tape.constant(x));
  return {out[graph.feature_index()].value(), out[graph.topo_order().back()].value()};
}

Var student_loss(Tape& tape, const NetGraph& graph, DofSet& dof, const Tensor& x,
                 const TrainConfig& config) {
  const TeacherOut t = teacher_forward(graph, x);
  const StudentForward s = student_forward(tape, graph, dof, tape.constant(x));
  const Var kd = kd_loss(tape, t.features, s.features);
  if (config.ce_mix == 0.0f) return kd;
  return mixed_loss(tape, kd, soft_cross_entropy(tape, t.logits, s.logits), config.ce_mix);
}

std::size_t start_offset(const TrainConfig& config, std::size_t size) {
  std::uint64_t z = config.seed + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return static_cast<std::size_t>((z ^ (z >> 31)) % size);
}

}  // namespace

void TrainConfig::validate() const {
  require(epochs >= 0 && restart_epochs > 0, ErrorCode::kInvalidArgument,
          "epochs must be >= 0 and restart_epochs > 0");
  require(batch_size > 0 && images_per_epoch >= batch_size, ErrorCode::kInvalidArgument,
          "batch_size must be positive and at most images_per_epoch");
  require(base_lr > 0.0, ErrorCode::kInvalidArgument, "base_lr must be positive");
  require(ce_mix >= 0.0f && ce_mix <= 1.0f, ErrorCode::kInvalidArgument, "ce_mix must be in [0, 1]");
}

std::size_t TrainConfig::steps_per_epoch() const { return images_per_epoch / batch_size; }

std::size_t TrainConfig::total_steps() const {
  const std::size_t full = steps_per_epoch() * static_cast<std::size_t>(epochs);
  return max_steps != 0 ? std::min(full, max_steps) : full;
}

double lr_at(std::size_t step, const TrainConfig& config) {
  const std::size_t per_epoch = config.steps_per_epoch();
  require(per_epoch > 0, ErrorCode::kInvalidArgument, "images_per_epoch below batch_size");
  const std::size_t seg_len = per_epoch * static_cast<std::size_t>(config.restart_epochs);
  const std::size_t seg = step / seg_len;
  const double amp = std::ldexp(config.base_lr, -static_cast<int>(seg));
  const double pos = static_cast<double>(step - seg * seg_len) / static_cast<double>(seg_len);
  return amp * (1.0 + std::cos(std::numbers::pi * pos)) / 2.0;
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig config)
    : params_(std::move(params)), cfg_(config) {
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.numel(), 0.0);
    v_.emplace_back(p->value.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    if (!p.trainable || p.grad.numel() != p.value.numel()) continue;
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double g = p.grad[i];
      m_[k][i] = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * g;
      v_[k][i] = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * g * g;
      const double update = lr * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + cfg_.epsilon);
      p.value[i] = static_cast<float>(p.value[i] - update);
    }
  }
}

Var kd_loss(Tape& tape, const Tensor& teacher, Var student) {
  require(teacher.shape() == student.shape(), ErrorCode::kShapeMismatch,
          "teacher " + shape_str(teacher.shape()) + " vs student " + shape_str(student.shape()));
  double norm = 0.0;
  for (float v : teacher.data()) norm += static_cast<double>(v) * v;
  if (norm == 0.0) {
    warn("kd_loss: teacher features are all zero; using mean-square error");
    norm = static_cast<double>(teacher.numel());
  }
  const Var d = sub(student, tape.constant(teacher), Broadcast::kSame);
  const Var sq = reduce_sum(mul(d, d, Broadcast::kSame));
  return div(sq, tape.constant(Tensor::scalar(static_cast<float>(norm))), Broadcast::kScalar);
}

Var soft_cross_entropy(Tape& tape, const Tensor& teacher_logits, Var student_logits) {
  require(teacher_logits.shape() == student_logits.shape() && teacher_logits.rank() == 2,
          ErrorCode::kShapeMismatch, "soft cross-entropy expects matching [B, K] logits");
  const std::size_t B = teacher_logits.dim(0), K = teacher_logits.dim(1);
  Tensor p(teacher_logits.shape());
  for (std::size_t b = 0; b < B; ++b) {
    const float* row = teacher_logits.data().data() + b * K;
    const float mx = *std::max_element(row, row + K);
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(static_cast<double>(row[k] - mx));
    for (std::size_t k = 0; k < K; ++k) {
      p[b * K + k] = static_cast<float>(std::exp(static_cast<double>(row[k] - mx)) / s);
    }
  }
  const Var ll = reduce_sum(mul(tape.constant(std::move(p)), log_softmax(student_logits),
                                Broadcast::kSame));
  return mul(ll, tape.constant(Tensor::scalar(-1.0f / static_cast<float>(B))), Broadcast::kScalar);
}

Var mixed_loss(Tape& tape, Var kd, Var ce, float lambda) {
  require(lambda >= 0.0f && lambda <= 1.0f, ErrorCode::kInvalidArgument, "lambda must be in [0, 1]");
  if (lambda == 0.0f) return kd;
  if (lambda == 1.0f) return ce;
  const Var a = mul(kd, tape.constant(Tensor::scalar(1.0f - lambda)), Broadcast::kScalar);
  const Var b = mul(ce, tape.constant(Tensor::scalar(lambda)), Broadcast::kScalar);
  return add(a, b, Broadcast::kSame);
}

std::string TrainReport::to_json() const {
  nlohmann::json j;
  j["steps"] = steps;
  j["initial_loss"] = initial_loss;
  j["final_loss"] = final_loss;
  j["wall_seconds"] = wall_seconds;
  j["loss_curve"] = loss_curve;
  j["lr_curve"] = lr_curve;
  return j.dump(1);
}

double evaluate_loss(const NetGraph& graph, DofSet& dof, const ImageSource& data,
                     const TrainConfig& config) {
  const std::size_t n = std::max<std::size_t>(config.eval_batches, 1);
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const Tensor x = data.batch(k * config.batch_size, config.batch_size);
    Tape tape;
    tape.set_grad_enabled(false);
    total += student_loss(tape, graph, dof, x, config).value().item();
  }
  return total / static_cast<double>(n);
}

TrainReport train(const NetGraph& graph, DofSet& dof, const ImageSource& data,
                  const TrainConfig& config, const StepCallback& on_step) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  report.initial_loss = evaluate_loss(graph, dof, data, config);

  std::vector<Parameter*> params = dof.trainable_parameters();
  Adam adam(params);
  const std::size_t steps = params.empty() ? 0 : config.total_steps();
  const std::size_t offset = start_offset(config, data.size());
  for (std::size_t step = 0; step < steps; ++step) {
    const double lr = lr_at(step, config);
    const Tensor x = data.batch(offset + step * config.batch_size, config.batch_size);
    for (Parameter* p : params) p->zero_grad();
    Tape tape;
    const Var loss = student_loss(tape, graph, dof, x, config);
    const double value = loss.value().item();
    if (!std::isfinite(value)) {
      if (!config.divergence_snapshot.empty()) save_snapshot(dof, config.divergence_snapshot);
      fail(ErrorCode::kNumeric, "training diverged: loss is " + std::to_string(value) +
                                    " at step " + std::to_string(step));
    }
    tape.backward(loss);
    adam.step(lr);
    dof.clamp_scales();
    report.loss_curve.push_back(value);
    report.lr_curve.push_back(lr);
    if (on_step) on_step(step, value);
  }
  report.steps = steps;
  report.final_loss = steps == 0 ? report.initial_loss : evaluate_loss(graph, dof, data, config);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace qft
