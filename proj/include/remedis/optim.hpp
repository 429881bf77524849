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

#pragma once

// Optimizers and learning-rate schedules.
//
// Weight decay w is added to the gradient (g' = g + w * theta) for every
// optimizer. Parameters whose names end in ".gamma", ".beta" or ".b" are
// norm/bias parameters: LARS skips trust-ratio adaptation and decay for them.
//
//   LARS:   lambda = eta * |theta| / |g'|  (1 when |theta| or |g| is 0)
//           v = beta * v + lr * lambda * g';  theta -= v
//   SGD-N:  v = beta * v + g';  theta -= lr * (g' + beta * v)
//   Adam:   m = b1 m + (1-b1) g';  s = b2 s + (1-b2) g'^2
//           theta -= lr * (m / (1-b1^t)) / (sqrt(s / (1-b2^t)) + eps)

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "remedis/tensor.hpp"

namespace remedis::optim {

enum class OptimizerKind { kLars, kSgdNesterov, kAdam };

OptimizerKind parse_optimizer(std::string_view name);
std::string_view optimizer_name(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kLars;
  double weight_decay = 1e-6;
  double momentum = 0.9;
  double trust_coefficient = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

bool is_norm_or_bias(std::string_view name);

void lars_update(Tensor& param, const Tensor& grad, Tensor& velocity,
                 const OptimizerConfig& cfg, double lr, bool adapt);
void sgd_nesterov_update(Tensor& param, const Tensor& grad, Tensor& velocity,
                         const OptimizerConfig& cfg, double lr);
// `step` is the 1-based update count used for bias correction.
void adam_update(Tensor& param, const Tensor& grad, Tensor& first, Tensor& second,
                 std::size_t step, const OptimizerConfig& cfg, double lr);

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) {}

  // Applies one update to every parameter that has a gradient.
  void step(std::map<std::string, Tensor>& params,
            const std::map<std::string, Tensor>& grads, double lr);

  const OptimizerConfig& config() const { return config_; }
  std::size_t steps_taken() const { return steps_; }
  const std::map<std::string, Tensor>& slots() const { return first_; }

 private:
  OptimizerConfig config_;
  std::size_t steps_ = 0;
  std::map<std::string, Tensor> first_;
  std::map<std::string, Tensor> second_;
};

enum class ScheduleKind { kConstant, kLinearDecay, kExponentialStaircase };

ScheduleKind parse_schedule(std::string_view name);
std::string_view schedule_name(ScheduleKind kind);

struct Schedule {
  ScheduleKind kind = ScheduleKind::kConstant;
  double base_lr = 0.1;
  double decay_factor = 0.1;
  std::size_t decay_steps = 1000;
  std::size_t max_steps = 1000;

  // constant: base; linear: base * (1 - t/M); staircase: base * factor^floor(t/step)
  double value(std::size_t t) const;
};

// n logarithmically spaced values from lo to hi inclusive.
std::vector<double> log_spaced(std::size_t n, double lo, double hi);

}  // namespace remedis::optim
