// Copyright 2026 The Remedis Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "remedis/optim.hpp"

#include <cmath>

#include "remedis/error.hpp"

namespace remedis::optim {
namespace {

void check_shapes(const Tensor& param, const Tensor& grad, const char* op) {
  if (param.shape() != grad.shape()) {
    fail(ErrorCode::kShapeMismatch, std::string(op) + ": param " + shape_str(param.shape()) +
                                        " vs grad " + shape_str(grad.shape()));
  }
}

void ensure_slot(Tensor& slot, const Tensor& like) {
  if (slot.shape() != like.shape()) slot = Tensor(like.shape());
}

double norm(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.data()) acc += v * v;
  return std::sqrt(acc);
}

}  // namespace

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "lars") return OptimizerKind::kLars;
  if (name == "sgd_nesterov" || name == "sgd") return OptimizerKind::kSgdNesterov;
  if (name == "adam") return OptimizerKind::kAdam;
  fail(ErrorCode::kInvalidArgument, "unknown optimizer '" + std::string(name) + "'");
}

std::string_view optimizer_name(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::kLars: return "lars";
    case OptimizerKind::kSgdNesterov: return "sgd_nesterov";
    case OptimizerKind::kAdam: return "adam";
  }
  return "unknown";
}

bool is_norm_or_bias(std::string_view name) {
  return name.ends_with(".gamma") || name.ends_with(".beta") || name.ends_with(".b");
}

void lars_update(Tensor& param, const Tensor& grad, Tensor& velocity,
                 const OptimizerConfig& cfg, double lr, bool adapt) {
  check_shapes(param, grad, "lars_update");
  ensure_slot(velocity, param);
  const double wd = adapt ? cfg.weight_decay : 0.0;
  Tensor step(grad.shape());
  for (std::size_t i = 0; i < grad.size(); ++i) step[i] = grad[i] + wd * param[i];
  double trust = 1.0;
  if (adapt) {
    const double wn = norm(param);
    const double gn = norm(grad);
    const double sn = norm(step);
    if (wn > 0.0 && gn > 0.0 && sn > 0.0) trust = cfg.trust_coefficient * wn / sn;
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = cfg.momentum * velocity[i] + lr * trust * step[i];
    param[i] -= velocity[i];
  }
}

void sgd_nesterov_update(Tensor& param, const Tensor& grad, Tensor& velocity,
                         const OptimizerConfig& cfg, double lr) {
  check_shapes(param, grad, "sgd_nesterov_update");
  ensure_slot(velocity, param);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i] + cfg.weight_decay * param[i];
    velocity[i] = cfg.momentum * velocity[i] + g;
    param[i] -= lr * (g + cfg.momentum * velocity[i]);
  }
}

void adam_update(Tensor& param, const Tensor& grad, Tensor& first, Tensor& second,
                 std::size_t step, const OptimizerConfig& cfg, double lr) {
  check_shapes(param, grad, "adam_update");
  require(step >= 1, "adam_update: step is 1-based");
  ensure_slot(first, param);
  ensure_slot(second, param);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i] + cfg.weight_decay * param[i];
    first[i] = cfg.beta1 * first[i] + (1.0 - cfg.beta1) * g;
    second[i] = cfg.beta2 * second[i] + (1.0 - cfg.beta2) * g * g;
    param[i] -= lr * (first[i] / c1) / (std::sqrt(second[i] / c2) + cfg.epsilon);
  }
}

void Optimizer::step(std::map<std::string, Tensor>& params,
                     const std::map<std::string, Tensor>& grads, double lr) {
  ++steps_;
  for (auto& [name, param] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    switch (config_.kind) {
      case OptimizerKind::kLars:
        lars_update(param, it->second, first_[name], config_, lr, !is_norm_or_bias(name));
        break;
      case OptimizerKind::kSgdNesterov:
        sgd_nesterov_update(param, it->second, first_[name], config_, lr);
        break;
      case OptimizerKind::kAdam:
        adam_update(param, it->second, first_[name], second_[name], steps_, config_, lr);
        break;
    }
  }
}

ScheduleKind parse_schedule(std::string_view name) {
  if (name == "constant") return ScheduleKind::kConstant;
  if (name == "linear") return ScheduleKind::kLinearDecay;
  if (name == "exponential") return ScheduleKind::kExponentialStaircase;
  fail(ErrorCode::kInvalidArgument, "unknown schedule '" + std::string(name) + "'");
}

std::string_view schedule_name(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::kConstant: return "constant";
    case ScheduleKind::kLinearDecay: return "linear";
    case ScheduleKind::kExponentialStaircase: return "exponential";
  }
  return "unknown";
}

double Schedule::value(std::size_t t) const {
  if (t > max_steps) {
    fail(ErrorCode::kInvalidArgument, "schedule: step " + std::to_string(t) +
                                          " beyond max steps " + std::to_string(max_steps));
  }
  switch (kind) {
    case ScheduleKind::kConstant: return base_lr;
    case ScheduleKind::kLinearDecay:
      if (max_steps == 0) return base_lr;
      return base_lr * (1.0 - static_cast<double>(t) / static_cast<double>(max_steps));
    case ScheduleKind::kExponentialStaircase: {
      require(decay_steps > 0, "schedule: decay step must be positive");
      const auto k = static_cast<double>(t / decay_steps);
      return base_lr * std::pow(decay_factor, k);
    }
  }
  return base_lr;
}

std::vector<double> log_spaced(std::size_t n, double lo, double hi) {
  require(n >= 1, "log_spaced: need at least one sample");
  require(lo > 0.0 && hi >= lo, "log_spaced: need 0 < lo <= hi");
  if (n == 1) return {lo};
  std::vector<double> out(n);
  const double a = std::log10(lo), b = std::log10(hi);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  return out;
}

}  // namespace remedis::optim
