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

// Supervised pretraining -> contrastive adaptation -> fine-tuning, and the
// three-scenario evaluation protocol built on top of them.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "remedis/augment.hpp"
#include "remedis/contrastive.hpp"
#include "remedis/data.hpp"
#include "remedis/models.hpp"
#include "remedis/optim.hpp"

namespace remedis::pipeline {

struct LossPoint {
  std::size_t step = 0;
  double loss = 0.0;
};

// ---------------------------------------------------------------- pretraining

struct SupervisedConfig {
  optim::OptimizerConfig optimizer{optim::OptimizerKind::kSgdNesterov, 1e-5};
  optim::ScheduleKind schedule = optim::ScheduleKind::kLinearDecay;
  double learning_rate = 0.05;
  std::size_t steps = 300;
  std::size_t batch_size = 32;
  augment::AugmentPolicy policy = light_policy();

  static augment::AugmentPolicy light_policy();
};

struct SupervisedResult {
  models::EncoderState encoder;  // f_phi
  std::vector<LossPoint> history;
  double heldout_accuracy = 0.0;
};

SupervisedResult supervised_pretrain(const models::EncoderConfig& config,
                                     const data::Splits& upstream, const SupervisedConfig& cfg,
                                     std::uint64_t seed);

struct CheckpointRecord {
  std::size_t step = 0;
  double loss = 0.0;
  std::optional<models::EncoderState> snapshot;  // kept for in-window steps
};

// First step of the selection window, ceil(0.999 * M).
std::size_t window_start(std::size_t max_steps);
// Steps M - k * every for k = 0..floor(M / every), ascending.
std::vector<std::size_t> checkpoint_steps(std::size_t max_steps, std::size_t every);
// Minimum-loss record with step in [ceil(0.999 M), M]; earliest step on ties.
const CheckpointRecord& select_checkpoint(const std::vector<CheckpointRecord>& records,
                                          std::size_t max_steps);

struct ContrastivePretrainConfig {
  contrastive::ContrastiveConfig loss;
  augment::AugmentPolicy policy;
  optim::OptimizerConfig optimizer;  // LARS by default
  optim::ScheduleKind schedule = optim::ScheduleKind::kLinearDecay;
  double learning_rate = 0.3;
  std::size_t max_steps = 5000;
  std::size_t checkpoint_every = 1;
  int projection_dim = 16;
};

struct ContrastiveResult {
  std::vector<CheckpointRecord> checkpoints;
  std::vector<LossPoint> history;  // training loss per step
  models::EncoderState encoder;    // f_theta, the selected checkpoint
  std::size_t selected_step = 0;
  std::string base_hash;           // content hash of the starting encoder
};

ContrastiveResult contrastive_pretrain(const models::EncoderState& init, const data::Dataset& unlabeled,
                                       const ContrastivePretrainConfig& cfg, std::uint64_t seed);

// Content hash of an encoder's parameters and config.
std::string encoder_hash(const models::EncoderState& encoder);

// Rejects a contrastive encoder that was not adapted from `base`.
void verify_chain(const models::EncoderState& base, const ContrastiveResult& adapted);

// ---------------------------------------------------------------- fine-tuning

enum class HeadScenario { kPretrainedRandomHead, kFinetunedKeepHead, kFinetunedRandomHead };

std::string_view scenario_name(HeadScenario s);
HeadScenario parse_scenario(std::string_view name);

struct GridPoint {
  double learning_rate = 0.01;
  double weight_decay = 0.0;
};

struct FinetuneConfig {
  optim::OptimizerKind optimizer = optim::OptimizerKind::kSgdNesterov;
  double momentum = 0.9;
  optim::ScheduleKind schedule = optim::ScheduleKind::kLinearDecay;
  double decay_factor = 0.1;
  std::size_t decay_steps = 1000;
  std::size_t max_steps = 1000;
  std::size_t batch_size = 32;
  std::size_t eval_every = 50;
  std::size_t patience = 0;  // evaluations without improvement; 0 disables
  bool linear_probe = false;
  bool attention = false;
  int attention_hidden = 16;
  augment::AugmentPolicy policy = SupervisedConfig::light_policy();
};

struct Evaluation {
  double accuracy = 0.0;
  std::optional<double> auc;  // binary tasks only
  std::vector<int> predictions;
};

Evaluation evaluate(const models::Model& model, const data::Dataset& records);

struct FinetuneResult {
  models::Model model;
  double best_val_metric = 0.0;
  std::size_t best_step = 0;
  std::vector<LossPoint> val_history;  // (step, validation accuracy)
};

// `init` carries the encoder and, for kFinetunedKeepHead, the head to keep.
// Targets are soft label rows [N,C] aligned with `train`.
FinetuneResult train_classifier(const models::Model& init, const data::Dataset& train,
                                const Tensor& targets, const data::Dataset& validation,
                                const GridPoint& point, const FinetuneConfig& cfg,
                                std::uint64_t seed);

// Builds the starting model for a scenario.
models::Model scenario_init(const models::Model& source, HeadScenario scenario, int num_classes,
                            const FinetuneConfig& cfg, std::uint64_t seed);

FinetuneResult finetune(const models::Model& source, HeadScenario scenario,
                        const data::Dataset& train, double fraction,
                        const data::Dataset& validation, const GridPoint& point,
                        const FinetuneConfig& cfg, std::uint64_t seed);

struct LeaderboardEntry {
  std::size_t index = 0;  // position in the grid
  GridPoint point;
  double metric = 0.0;
};

struct GridResult {
  std::size_t best = 0;
  std::vector<LeaderboardEntry> leaderboard;  // descending metric, grid order on ties
};

GridResult grid_search(const std::vector<GridPoint>& grid,
                       const std::function<double(const GridPoint&, std::size_t)>& evaluate_point,
                       std::size_t workers = 1);

// Log-spaced lr x wd product grid.
std::vector<GridPoint> make_grid(const std::vector<double>& learning_rates,
                                 const std::vector<double>& weight_decays);

// Row-softmax of teacher logits; each row sums to 1.
Tensor soft_labels(const Tensor& logits);
Tensor one_hot_targets(const data::Dataset& records, int num_classes);

struct SelfTrainResult {
  FinetuneResult teacher;
  FinetuneResult student;
  Tensor unlabeled_targets;
};

// Teacher fine-tuned on D_in (own grid); student trained from `init` on D_in
// hard labels plus teacher soft labels on D_u (own grid).
SelfTrainResult self_train(const models::Model& init, const data::Splits& in,
                           const data::Dataset& unlabeled, int num_classes,
                           const std::vector<GridPoint>& teacher_grid,
                           const std::vector<GridPoint>& student_grid, const FinetuneConfig& cfg,
                           std::uint64_t seed, std::size_t workers = 1);

// ------------------------------------------------------------------ protocol

enum class Strategy { kNone, kSupervised, kRemedis, kSelfTraining };

std::string_view strategy_name(Strategy s);
Strategy parse_strategy(std::string_view name);

struct ProtocolSpec {
  data::BaseSpec base;
  data::ShiftSpec shift;
  std::vector<Strategy> strategies{Strategy::kSupervised, Strategy::kRemedis};
  std::vector<std::string> presets{"small"};
  int in_channels = 1;
  SupervisedConfig supervised;
  ContrastivePretrainConfig contrastive;
  FinetuneConfig finetune;
  std::vector<GridPoint> id_grid{{0.01, 0.0}};
  std::vector<GridPoint> ood_grid{{0.01, 0.0}};
  std::vector<HeadScenario> ood_scenarios{HeadScenario::kPretrainedRandomHead,
                                          HeadScenario::kFinetunedKeepHead,
                                          HeadScenario::kFinetunedRandomHead};
  std::vector<double> fractions{0.0, 0.1, 0.2, 0.5, 1.0};
  std::size_t repeats = 10;
  std::uint64_t seed = 0;
  bool record_timing = false;

  void validate() const;
};

struct MetricRow {
  std::string strategy;
  std::string arch;
  std::string scenario;  // in_distribution | zero_shot | ood_finetune
  double fraction = 0.0;
  std::size_t repeat = 0;
  std::string metric_name;
  std::optional<double> value;  // empty when the cell failed
  std::uint64_t seed = 0;
  std::optional<double> wall_seconds;
};

// Per-example predictions kept for the zero-shot cell and the largest OOD
// fraction, for subgroup tables.
struct PredictionRow {
  std::string strategy;
  std::string arch;
  std::string scenario;
  double fraction = 0.0;
  std::size_t repeat = 0;
  std::uint64_t record_id = 0;
  int subgroup = 0;
  int label = 0;
  int prediction = 0;
};

struct OodSelection {
  std::string strategy;
  std::string arch;
  HeadScenario scenario = HeadScenario::kPretrainedRandomHead;
  GridPoint point;
  double val_metric = 0.0;
};

struct CellError {
  std::string strategy;
  std::string arch;
  std::size_t repeat = 0;
  std::string message;
};

struct PretrainedEncoder {
  std::string strategy;
  std::string arch;
  models::EncoderState encoder;
  std::string hash;
};

// Pretraining chain for one architecture: random init, supervised f_phi and
// the contrastive f_theta adapted from it, as requested by the strategies.
struct ArchPretraining {
  std::string arch;
  models::EncoderState random;
  std::optional<SupervisedResult> supervised;
  std::optional<ContrastiveResult> contrastive;
};

// Bundle generated from the protocol's seed.
data::TaskBundle protocol_bundle(const ProtocolSpec& spec);
std::vector<ArchPretraining> pretrain_all(const ProtocolSpec& spec, const data::TaskBundle& bundle,
                                          std::size_t workers);

struct ProtocolResult {
  std::vector<MetricRow> rows;
  std::vector<PredictionRow> predictions;
  std::vector<OodSelection> selections;
  std::vector<CellError> errors;
  std::vector<PretrainedEncoder> encoders;
  std::vector<std::pair<std::string, std::vector<LossPoint>>> loss_histories;
  std::vector<ArchPretraining> pretraining;
  std::string bundle_hash;
  std::string fingerprint_hash;
};

// Optional hook so tests can inject failures into a unit.
using UnitHook = std::function<void(Strategy, const std::string& arch, std::size_t repeat)>;

ProtocolResult run_protocol(const ProtocolSpec& spec, std::size_t workers,
                            const UnitHook& hook = nullptr);
ProtocolResult run_protocol(const ProtocolSpec& spec, const data::TaskBundle& bundle,
                            std::size_t workers, const UnitHook& hook = nullptr);

// CSV with header strategy,arch,scenario,fraction,repeat,metric_name,value,
// seed,wall_seconds. Rows are sorted by (strategy, arch, scenario, fraction,
// repeat, metric_name).
std::string metrics_csv(const std::vector<MetricRow>& rows);
std::string metrics_jsonl(const std::vector<MetricRow>& rows);
std::vector<MetricRow> parse_metrics_csv(const std::string& text);
std::string predictions_csv(const std::vector<PredictionRow>& rows);
std::vector<PredictionRow> parse_predictions_csv(const std::string& text);

}  // namespace remedis::pipeline
