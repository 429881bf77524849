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

#include "remedis/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "remedis/checkpoint.hpp"
#include "remedis/error.hpp"
#include "remedis/hash.hpp"
#include "remedis/log.hpp"
#include "remedis/parallel.hpp"
#include "remedis/stats.hpp"

namespace remedis::pipeline {
namespace {

using models::Bound;
using models::Model;
using models::Params;

// Stream tags for derive_seed.
enum Tag : std::uint64_t {
  kTagInit = 11,
  kTagSupervised = 12,
  kTagContrastive = 13,
  kTagHead = 14,
  kTagBatches = 15,
  kTagAugment = 16,
  kTagEval = 17,
  kTagId = 18,
  kTagOod = 19,
  kTagSubsample = 20,
  kTagData = 21,
  kTagSelect = 22,
  kTagTeacher = 23,
  kTagStudent = 24,
};

// Epoch-wise shuffled batches without replacement; a short tail is dropped.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed)
      : n_(n), batch_(std::min(batch, n)), seed_(seed) {
    require(n > 0 && batch > 0, "batch sampler: empty dataset or zero batch size");
    reshuffle();
  }

  std::vector<std::size_t> next() {
    if (pos_ + batch_ > n_) {
      ++epoch_;
      reshuffle();
    }
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch_));
    pos_ += batch_;
    return out;
  }

  std::uint64_t epoch() const { return epoch_; }

 private:
  void reshuffle() {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), 0);
    Rng rng(derive_seed({seed_, epoch_}));
    std::shuffle(order_.begin(), order_.end(), rng.engine());
    pos_ = 0;
  }

  std::size_t n_, batch_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t pos_ = 0;
  std::vector<std::size_t> order_;
};

std::map<std::string, Tensor> collect_grads(const Bound& bound, const ad::Gradients& grads) {
  std::map<std::string, Tensor> out;
  for (const auto& [name, var] : bound) {
    if (grads.contains(var)) out.emplace(name, grads[var]);
  }
  return out;
}

// Applies one optimizer step over a set of parameter maps that share one
// optimizer (names are disjoint).
void step_all(optim::Optimizer& opt, std::vector<Params*> groups,
              std::map<std::string, Tensor> grads, double lr) {
  Params all;
  std::vector<std::vector<std::string>> names(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (auto& [name, t] : *groups[g]) {
      names[g].push_back(name);
      all.emplace(name, std::move(t));
    }
    groups[g]->clear();
  }
  opt.step(all, grads, lr);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (const auto& name : names[g]) groups[g]->emplace(name, std::move(all.at(name)));
  }
}

void check_finite_loss(double loss, std::size_t step, const char* phase) {
  if (!std::isfinite(loss)) {
    fail(ErrorCode::kNumericOverflow,
         std::string(phase) + ": loss diverged at step " + std::to_string(step));
  }
}

// Runs one training step; non-finite values raised by the tape are reported
// with the step index.
template <typename F>
void at_step(std::size_t step, const char* phase, F&& body) {
  try {
    body();
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNumericOverflow) throw;
    fail(ErrorCode::kNumericOverflow,
         std::string(phase) + ": diverged at step " + std::to_string(step) + " (" + e.what() + ")");
  }
}

// Augmented (or plain) images for a batch of records; `storage` owns them.
std::vector<std::vector<const Image*>> batch_cases(const data::Dataset& records,
                                                   std::span<const std::size_t> idx, bool all_views,
                                                   const augment::AugmentPolicy* policy,
                                                   std::uint64_t seed, std::uint64_t epoch,
                                                   std::vector<Image>& storage) {
  storage.clear();
  std::size_t total = 0;
  for (std::size_t i : idx) total += all_views ? records[i].views.size() : 1;
  storage.reserve(total);
  std::vector<std::vector<const Image*>> cases;
  cases.reserve(idx.size());
  for (std::size_t i : idx) {
    const data::Record& r = records[i];
    if (r.views.empty()) fail(ErrorCode::kInvalidArgument, "record without images");
    std::vector<const Image*> c;
    const std::size_t nv = all_views ? r.views.size() : 1;
    for (std::size_t v = 0; v < nv; ++v) {
      if (policy) {
        Rng rng(derive_seed({seed, kTagAugment, r.id, epoch, v}));
        storage.push_back(augment::apply_policy(r.views[v], *policy, rng));
        c.push_back(&storage.back());
      } else {
        c.push_back(&r.views[v]);
      }
    }
    cases.push_back(std::move(c));
  }
  return cases;
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
  const std::size_t width = t.size() / t.dim(0);
  Tensor out({rows.size(), t.dim(1)});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(t.raw() + rows[i] * width, width, out.raw() + i * width);
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) fail(ErrorCode::kCompute, "format_double failed");
  return std::string(buf, end);
}

double contrastive_eval_loss(const models::EncoderState& enc, const Params& projection,
                             const contrastive::PairBatch& batch, double temperature) {
  const Tensor z = models::project(projection, models::encode(enc, batch.views));
  return contrastive::nt_xent_loss(z, batch.pairing, temperature).loss;
}

}  // namespace

// ---------------------------------------------------------------- pretraining

augment::AugmentPolicy SupervisedConfig::light_policy() {
  augment::AugmentPolicy p = augment::AugmentPolicy::none();
  p.crop = true;
  p.crop_area = {0.6, 1.0};
  p.flip_probability = 0.5;
  return p;
}

SupervisedResult supervised_pretrain(const models::EncoderConfig& config, const data::Splits& upstream,
                                     const SupervisedConfig& cfg, std::uint64_t seed) {
  config.validate();
  if (upstream.train.empty()) fail(ErrorCode::kInvalidArgument, "supervised_pretrain: empty upstream set");
  int classes = 0;
  for (const auto& r : upstream.train) classes = std::max(classes, r.label + 1);
  if (classes < 2) fail(ErrorCode::kInvalidArgument, "supervised_pretrain: upstream needs >= 2 labels");

  Rng init_rng(derive_seed({seed, kTagInit}));
  SupervisedResult result;
  Model model;
  model.encoder = models::build_encoder(config, init_rng);
  model.head_config = models::HeadConfig{config.embed_dim, classes, false, 16};
  model.head = models::build_classification_head(model.head_config, models::HeadInit::kRandom, init_rng);

  optim::Optimizer opt(cfg.optimizer);
  const optim::Schedule sched{cfg.schedule, cfg.learning_rate, 0.1, std::max<std::size_t>(1, cfg.steps),
                              std::max<std::size_t>(1, cfg.steps)};
  BatchSampler sampler(upstream.train.size(), cfg.batch_size, derive_seed({seed, kTagBatches}));
  const Tensor targets = one_hot_targets(upstream.train, classes);
  std::vector<Image> storage;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const auto idx = sampler.next();
    const auto cases = batch_cases(upstream.train, idx, false, &cfg.policy, seed, sampler.epoch(), storage);
    at_step(step, "supervised_pretrain", [&] {
      ad::Tape tape;
      Bound enc = models::bind(tape, model.encoder.params, true);
      Bound head = models::bind(tape, model.head, true);
      ad::Var logits = models::case_logits(model, enc, head, cases, tape);
      ad::Var loss = ad::mean(ad::cross_entropy_rows(logits, gather_rows(targets, idx)));
      const double value = loss.value().item();
      check_finite_loss(value, step, "supervised_pretrain");
      result.history.push_back({step, value});
      const ad::Gradients g = tape.backward(loss);
      auto grads = collect_grads(enc, g);
      auto head_grads = collect_grads(head, g);
      grads.merge(head_grads);
      step_all(opt, {&model.encoder.params, &model.head}, std::move(grads), sched.value(step - 1));
    });
  }
  const data::Dataset& heldout = upstream.test.empty() ? upstream.validation : upstream.test;
  if (!heldout.empty()) result.heldout_accuracy = evaluate(model, heldout).accuracy;
  if (cfg.steps > 0) {
    models::check_transition(model.encoder.provenance, models::Provenance::kSupervisedPretrained);
    model.encoder.provenance = models::Provenance::kSupervisedPretrained;
  }
  result.encoder = std::move(model.encoder);
  logger().info("supervised_pretrain: {} steps, held-out accuracy {:.4f}", cfg.steps,
                result.heldout_accuracy);
  return result;
}

std::size_t window_start(std::size_t max_steps) {
  return (999 * max_steps + 999) / 1000;
}

std::vector<std::size_t> checkpoint_steps(std::size_t max_steps, std::size_t every) {
  require(every >= 1, "checkpoint_every must be >= 1");
  std::vector<std::size_t> steps;
  for (std::size_t k = 0; k <= max_steps / every; ++k) steps.push_back(max_steps - k * every);
  std::reverse(steps.begin(), steps.end());
  return steps;
}

const CheckpointRecord& select_checkpoint(const std::vector<CheckpointRecord>& records,
                                          std::size_t max_steps) {
  const std::size_t lo = window_start(max_steps);
  const CheckpointRecord* best = nullptr;
  for (const auto& r : records) {
    if (r.step < lo || r.step > max_steps) continue;
    if (!best || r.loss < best->loss || (r.loss == best->loss && r.step < best->step)) best = &r;
  }
  if (!best) {
    fail(ErrorCode::kInvalidArgument,
         "select_checkpoint: no checkpoint in window [" + std::to_string(lo) + ", " +
             std::to_string(max_steps) + "]; checkpoint more densely near the final step");
  }
  return *best;
}

std::string encoder_hash(const models::EncoderState& encoder) {
  Checkpoint ckpt;
  ckpt.meta["config"] = encoder.config.to_json();
  ckpt.tensors = encoder.params;
  return git_blob_hash(serialize_checkpoint(ckpt));
}

ContrastiveResult contrastive_pretrain(const models::EncoderState& init, const data::Dataset& unlabeled,
                                       const ContrastivePretrainConfig& cfg, std::uint64_t seed) {
  cfg.loss.validate();
  cfg.policy.validate();
  if (unlabeled.empty()) fail(ErrorCode::kInvalidArgument, "contrastive_pretrain: D_u is empty");
  models::check_transition(init.provenance, models::Provenance::kContrastivePretrained);

  ContrastiveResult result;
  result.base_hash = encoder_hash(init);
  Rng head_rng(derive_seed({seed, kTagHead}));
  const int dim = init.config.embed_dim;
  contrastive::PretrainState state{init, models::build_projection_head(dim, dim, cfg.projection_dim, head_rng),
                                   optim::Optimizer(cfg.optimizer)};
  const optim::Schedule sched{cfg.schedule, cfg.learning_rate, 0.1, std::max<std::size_t>(1, cfg.max_steps),
                              std::max<std::size_t>(1, cfg.max_steps)};

  auto spans_of = [&](std::span<const std::size_t> idx, std::vector<std::span<const Image>>& spans,
                      std::vector<std::uint64_t>& ids) {
    spans.clear();
    ids.clear();
    for (std::size_t i : idx) {
      spans.emplace_back(unlabeled[i].views);
      ids.push_back(unlabeled[i].id);
    }
  };
  // Fixed evaluation batch so checkpoint losses are comparable.
  std::vector<std::size_t> eval_idx(std::min(cfg.loss.batch_pairs, unlabeled.size()));
  std::iota(eval_idx.begin(), eval_idx.end(), 0);
  std::vector<std::span<const Image>> spans;
  std::vector<std::uint64_t> ids;
  spans_of(eval_idx, spans, ids);
  const contrastive::PairBatch eval_batch =
      contrastive::build_pair_batch(spans, ids, cfg.policy, derive_seed({seed, kTagEval}), 0);

  const auto steps = checkpoint_steps(cfg.max_steps, cfg.checkpoint_every);
  const std::size_t lo = window_start(cfg.max_steps);
  std::size_t next_ckpt = 0;
  auto maybe_checkpoint = [&](std::size_t step) {
    if (next_ckpt < steps.size() && steps[next_ckpt] == step) {
      CheckpointRecord rec;
      rec.step = step;
      rec.loss = contrastive_eval_loss(state.encoder, state.projection, eval_batch, cfg.loss.temperature);
      if (step >= lo) rec.snapshot = state.encoder;
      result.checkpoints.push_back(std::move(rec));
      ++next_ckpt;
    }
  };
  maybe_checkpoint(0);
  BatchSampler sampler(unlabeled.size(), cfg.loss.batch_pairs, derive_seed({seed, kTagBatches}));
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    const auto idx = sampler.next();
    spans_of(idx, spans, ids);
    const auto batch = contrastive::build_pair_batch(spans, ids, cfg.policy, seed, sampler.epoch());
    double loss = 0.0;
    at_step(step, "contrastive_pretrain",
            [&] { loss = contrastive::pretrain_step(state, batch, cfg.loss, sched.value(step - 1)); });
    check_finite_loss(loss, step, "contrastive_pretrain");
    result.history.push_back({step, loss});
    maybe_checkpoint(step);
  }
  const CheckpointRecord& chosen = select_checkpoint(result.checkpoints, cfg.max_steps);
  result.selected_step = chosen.step;
  result.encoder = *chosen.snapshot;
  result.encoder.provenance = models::Provenance::kContrastivePretrained;
  logger().info("contrastive_pretrain: {} steps, selected step {} (loss {:.5f})", cfg.max_steps,
                chosen.step, chosen.loss);
  return result;
}

void verify_chain(const models::EncoderState& base, const ContrastiveResult& adapted) {
  if (base.provenance != models::Provenance::kSupervisedPretrained) {
    fail(ErrorCode::kInvalidArgument, "provenance: remedis requires a supervised-pretrained base, got " +
                                          std::string(models::provenance_name(base.provenance)));
  }
  if (adapted.encoder.provenance != models::Provenance::kContrastivePretrained) {
    fail(ErrorCode::kInvalidArgument, "provenance: adapted encoder is not contrastive-pretrained");
  }
  if (encoder_hash(base) != adapted.base_hash) {
    fail(ErrorCode::kInvalidArgument,
         "provenance: contrastive encoder was not adapted from the configured supervised init");
  }
}

// ---------------------------------------------------------------- fine-tuning

std::string_view scenario_name(HeadScenario s) {
  switch (s) {
    case HeadScenario::kPretrainedRandomHead: return "pretrained_random_head";
    case HeadScenario::kFinetunedKeepHead: return "finetuned_keep_head";
    default: return "finetuned_random_head";
  }
}

HeadScenario parse_scenario(std::string_view name) {
  for (auto s : {HeadScenario::kPretrainedRandomHead, HeadScenario::kFinetunedKeepHead,
                 HeadScenario::kFinetunedRandomHead}) {
    if (scenario_name(s) == name) return s;
  }
  fail(ErrorCode::kInvalidArgument, "unknown head scenario '" + std::string(name) + "'");
}

Evaluation evaluate(const Model& model, const data::Dataset& records) {
  if (records.empty()) fail(ErrorCode::kInvalidArgument, "evaluate: empty dataset");
  Evaluation ev;
  std::vector<int> labels;
  std::vector<double> scores;
  const bool binary = model.head_config.num_classes == 2;
  constexpr std::size_t kChunk = 128;
  std::vector<Image> storage;
  for (std::size_t start = 0; start < records.size(); start += kChunk) {
    std::vector<std::size_t> idx(std::min(kChunk, records.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto cases = batch_cases(records, idx, model.head_config.attention, nullptr, 0, 0, storage);
    const Tensor logits = models::classify(model, cases);
    const auto preds = stats::argmax_rows(logits);
    ev.predictions.insert(ev.predictions.end(), preds.begin(), preds.end());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      labels.push_back(records[idx[i]].label);
      if (binary) scores.push_back(logits[i * 2 + 1] - logits[i * 2]);
    }
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += ev.predictions[i] == labels[i];
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  if (binary) {
    const bool both = std::count(labels.begin(), labels.end(), 1) > 0 &&
                      std::count(labels.begin(), labels.end(), 0) > 0;
    if (both) ev.auc = stats::auc(scores, labels);
  }
  return ev;
}

FinetuneResult train_classifier(const Model& init, const data::Dataset& train, const Tensor& targets,
                                const data::Dataset& validation, const GridPoint& point,
                                const FinetuneConfig& cfg, std::uint64_t seed) {
  if (train.empty()) fail(ErrorCode::kInvalidArgument, "finetune: empty training subset");
  require(targets.rank() == 2 && targets.dim(0) == train.size() &&
              targets.dim(1) == static_cast<std::size_t>(init.head_config.num_classes),
          "finetune: targets must be [N, num_classes]");
  require(cfg.eval_every >= 1, "finetune: eval_every must be >= 1");
  FinetuneResult result;
  Model model = init;
  optim::OptimizerConfig oc;
  oc.kind = cfg.optimizer;
  oc.weight_decay = point.weight_decay;
  oc.momentum = cfg.momentum;
  optim::Optimizer opt(oc);
  const optim::Schedule sched{cfg.schedule, point.learning_rate, cfg.decay_factor, cfg.decay_steps,
                              std::max<std::size_t>(1, cfg.max_steps)};

  result.best_val_metric = evaluate(model, validation).accuracy;
  result.val_history.push_back({0, result.best_val_metric});
  result.model = model;
  std::size_t stale = 0;
  BatchSampler sampler(train.size(), cfg.batch_size, derive_seed({seed, kTagBatches}));
  std::vector<Image> storage;
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    const auto idx = sampler.next();
    const auto cases = batch_cases(train, idx, model.head_config.attention, &cfg.policy, seed,
                                   sampler.epoch(), storage);
    at_step(step, "finetune", [&] {
      ad::Tape tape;
      Bound enc = models::bind(tape, model.encoder.params, !cfg.linear_probe);
      Bound head = models::bind(tape, model.head, true);
      ad::Var logits = models::case_logits(model, enc, head, cases, tape);
      ad::Var loss = ad::mean(ad::cross_entropy_rows(logits, gather_rows(targets, idx)));
      check_finite_loss(loss.value().item(), step, "finetune");
      const ad::Gradients g = tape.backward(loss);
      auto grads = collect_grads(head, g);
      std::vector<Params*> groups{&model.head};
      if (!cfg.linear_probe) {
        auto enc_grads = collect_grads(enc, g);
        grads.merge(enc_grads);
        groups.push_back(&model.encoder.params);
      }
      step_all(opt, groups, std::move(grads), sched.value(step - 1));
    });

    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      const double metric = evaluate(model, validation).accuracy;
      result.val_history.push_back({step, metric});
      if (metric > result.best_val_metric) {
        result.best_val_metric = metric;
        result.best_step = step;
        result.model = model;
        stale = 0;
      } else if (cfg.patience > 0 && ++stale >= cfg.patience) {
        break;
      }
    }
  }
  if (cfg.max_steps > 0) result.model.encoder.provenance = models::Provenance::kFineTuned;
  return result;
}

Model scenario_init(const Model& source, HeadScenario scenario, int num_classes,
                    const FinetuneConfig& cfg, std::uint64_t seed) {
  Model m;
  m.encoder = source.encoder;
  if (scenario == HeadScenario::kFinetunedKeepHead) {
    if (source.head.empty()) fail(ErrorCode::kInvalidArgument, "finetune: keep-head scenario needs a head");
    if (source.head_config.num_classes != num_classes) {
      fail(ErrorCode::kShapeMismatch, "finetune: kept head has a different label space");
    }
    m.head = source.head;
    m.head_config = source.head_config;
    return m;
  }
  m.head_config = models::HeadConfig{source.encoder.config.embed_dim, num_classes, cfg.attention,
                                     cfg.attention_hidden};
  Rng rng(derive_seed({seed, kTagHead}));
  m.head = models::build_classification_head(m.head_config, models::HeadInit::kRandom, rng);
  return m;
}

Tensor one_hot_targets(const data::Dataset& records, int num_classes) {
  std::vector<int> labels;
  labels.reserve(records.size());
  for (const auto& r : records) {
    if (r.label < 0 || r.label >= num_classes) fail(ErrorCode::kInvalidArgument, "label out of range");
    labels.push_back(r.label);
  }
  return ad::one_hot(labels, static_cast<std::size_t>(num_classes));
}

FinetuneResult finetune(const Model& source, HeadScenario scenario, const data::Dataset& train,
                        double fraction, const data::Dataset& validation, const GridPoint& point,
                        const FinetuneConfig& cfg, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    fail(ErrorCode::kInvalidArgument, "finetune: fraction must lie in (0, 1]");
  }
  int classes = 0;
  for (const auto& r : train) classes = std::max(classes, r.label + 1);
  for (const auto& r : validation) classes = std::max(classes, r.label + 1);
  if (scenario == HeadScenario::kFinetunedKeepHead) classes = source.head_config.num_classes;
  const auto idx = data::subsample_fraction(train, fraction, derive_seed({seed, kTagSubsample}));
  data::Dataset subset;
  subset.reserve(idx.size());
  for (std::size_t i : idx) subset.push_back(train[i]);
  if (subset.empty()) fail(ErrorCode::kInvalidArgument, "finetune: empty training subset");
  const Model init = scenario_init(source, scenario, classes, cfg, seed);
  return train_classifier(init, subset, one_hot_targets(subset, classes), validation, point, cfg, seed);
}

GridResult grid_search(const std::vector<GridPoint>& grid,
                       const std::function<double(const GridPoint&, std::size_t)>& evaluate_point,
                       std::size_t workers) {
  require(!grid.empty(), "grid_search: empty grid");
  std::vector<double> metrics(grid.size());
  parallel_for(grid.size(), workers, [&](std::size_t i) { metrics[i] = evaluate_point(grid[i], i); });
  GridResult r;
  for (std::size_t i = 0; i < grid.size(); ++i) r.leaderboard.push_back({i, grid[i], metrics[i]});
  std::stable_sort(r.leaderboard.begin(), r.leaderboard.end(),
                   [](const LeaderboardEntry& a, const LeaderboardEntry& b) { return a.metric > b.metric; });
  r.best = r.leaderboard.front().index;
  return r;
}

std::vector<GridPoint> make_grid(const std::vector<double>& learning_rates,
                                 const std::vector<double>& weight_decays) {
  std::vector<GridPoint> grid;
  for (double lr : learning_rates)
    for (double wd : weight_decays) grid.push_back({lr, wd});
  return grid;
}

Tensor soft_labels(const Tensor& logits) {
  ad::Tape tape;
  return ad::softmax_rows(tape.constant(logits)).value();
}

SelfTrainResult self_train(const Model& init, const data::Splits& in, const data::Dataset& unlabeled,
                           int num_classes, const std::vector<GridPoint>& teacher_grid,
                           const std::vector<GridPoint>& student_grid, const FinetuneConfig& cfg,
                           std::uint64_t seed, std::size_t workers) {
  if (in.train.empty()) fail(ErrorCode::kInvalidArgument, "self_train: D_in train split is empty");
  const Model start = scenario_init(init, HeadScenario::kPretrainedRandomHead, num_classes, cfg, seed);
  const Tensor hard = one_hot_targets(in.train, num_classes);

  auto train_on = [&](const data::Dataset& records, const Tensor& targets, const GridPoint& p,
                      std::uint64_t s) { return train_classifier(start, records, targets, in.validation, p, cfg, s); };

  const std::uint64_t teacher_seed = derive_seed({seed, kTagTeacher});
  const GridResult tg = grid_search(teacher_grid, [&](const GridPoint& p, std::size_t) {
    return train_on(in.train, hard, p, teacher_seed).best_val_metric;
  }, workers);
  SelfTrainResult result;
  result.teacher = train_on(in.train, hard, teacher_grid[tg.best], teacher_seed);

  // D_in with hard labels followed by D_u with the teacher's probabilities.
  data::Dataset combined = in.train;
  Tensor targets = hard;
  if (!unlabeled.empty()) {
    std::vector<std::size_t> all(unlabeled.size());
    std::iota(all.begin(), all.end(), 0);
    std::vector<Image> storage;
    Tensor logits({unlabeled.size(), static_cast<std::size_t>(num_classes)});
    constexpr std::size_t kChunk = 128;
    for (std::size_t s = 0; s < all.size(); s += kChunk) {
      const std::span<const std::size_t> idx(all.data() + s, std::min(kChunk, all.size() - s));
      const auto cases = batch_cases(unlabeled, idx, result.teacher.model.head_config.attention, nullptr, 0, 0, storage);
      const Tensor part = models::classify(result.teacher.model, cases);
      std::copy_n(part.raw(), part.size(), logits.raw() + s * static_cast<std::size_t>(num_classes));
    }
    result.unlabeled_targets = soft_labels(logits);
    Tensor merged({in.train.size() + unlabeled.size(), static_cast<std::size_t>(num_classes)});
    std::copy_n(hard.raw(), hard.size(), merged.raw());
    std::copy_n(result.unlabeled_targets.raw(), result.unlabeled_targets.size(), merged.raw() + hard.size());
    targets = std::move(merged);
    combined.insert(combined.end(), unlabeled.begin(), unlabeled.end());
  }
  const std::uint64_t student_seed = unlabeled.empty() ? teacher_seed : derive_seed({seed, kTagStudent});
  const GridResult sg = grid_search(student_grid, [&](const GridPoint& p, std::size_t) {
    return train_on(combined, targets, p, student_seed).best_val_metric;
  }, workers);
  result.student = train_on(combined, targets, student_grid[sg.best], student_seed);
  return result;
}

// ------------------------------------------------------------------ protocol

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kNone: return "none";
    case Strategy::kSupervised: return "supervised";
    case Strategy::kRemedis: return "remedis";
    default: return "self_training";
  }
}

Strategy parse_strategy(std::string_view name) {
  for (auto s : {Strategy::kNone, Strategy::kSupervised, Strategy::kRemedis, Strategy::kSelfTraining}) {
    if (strategy_name(s) == name) return s;
  }
  fail(ErrorCode::kInvalidArgument, "unknown strategy '" + std::string(name) + "'");
}

void ProtocolSpec::validate() const {
  base.validate();
  shift.validate(base.num_classes, static_cast<int>(base.subgroup_weights.size()));
  require(!strategies.empty(), "protocol: no strategies");
  require(!presets.empty(), "protocol: no encoder presets");
  require(repeats >= 2, "protocol: repeats must be >= 2 for confidence intervals");
  require(!id_grid.empty() && !ood_grid.empty() && !ood_scenarios.empty(), "protocol: empty grid");
  require(!fractions.empty() && fractions.front() == 0.0 && fractions.back() == 1.0,
          "protocol: fractions must start at 0 and end at 1.0");
  for (std::size_t i = 1; i < fractions.size(); ++i) {
    require(fractions[i] > fractions[i - 1], "protocol: fractions must be strictly increasing");
  }
  contrastive.loss.validate();
  contrastive.policy.validate();
  finetune.policy.validate();
  for (const auto& p : presets) models::EncoderConfig::from_preset(p, base.image_size, in_channels).validate();
}

data::TaskBundle protocol_bundle(const ProtocolSpec& spec) {
  spec.validate();
  return data::generate_task(derive_seed({spec.seed, kTagData}), spec.base, spec.shift);
}

std::vector<ArchPretraining> pretrain_all(const ProtocolSpec& spec, const data::TaskBundle& bundle,
                                          std::size_t workers) {
  spec.validate();
  auto uses = [&](Strategy s) {
    return std::find(spec.strategies.begin(), spec.strategies.end(), s) != spec.strategies.end();
  };
  const bool need_supervised = uses(Strategy::kSupervised) || uses(Strategy::kRemedis) || uses(Strategy::kSelfTraining);
  std::vector<ArchPretraining> arch(spec.presets.size());
  parallel_for(arch.size(), workers, [&](std::size_t a) {
    arch[a].arch = spec.presets[a];
    const auto cfg = models::EncoderConfig::from_preset(spec.presets[a], spec.base.image_size, spec.in_channels);
    Rng rng(derive_seed({spec.seed, kTagInit, a}));
    arch[a].random = models::build_encoder(cfg, rng);
    if (need_supervised) {
      arch[a].supervised =
          supervised_pretrain(cfg, bundle.upstream, spec.supervised, derive_seed({spec.seed, kTagSupervised, a}));
    }
    if (uses(Strategy::kRemedis)) {
      arch[a].contrastive = contrastive_pretrain(arch[a].supervised->encoder, bundle.unlabeled, spec.contrastive,
                                                 derive_seed({spec.seed, kTagContrastive, a}));
      verify_chain(arch[a].supervised->encoder, *arch[a].contrastive);
    }
  });
  return arch;
}

ProtocolResult run_protocol(const ProtocolSpec& spec, std::size_t workers, const UnitHook& hook) {
  return run_protocol(spec, protocol_bundle(spec), workers, hook);
}

ProtocolResult run_protocol(const ProtocolSpec& spec, const data::TaskBundle& bundle, std::size_t workers,
                            const UnitHook& hook) {
  spec.validate();
  using Clock = std::chrono::steady_clock;
  ProtocolResult result;
  result.bundle_hash = data::bundle_hash(bundle);
  result.fingerprint_hash = data::fingerprint(bundle).hash();
  const int classes = spec.base.num_classes;
  const auto& strategies = spec.strategies;
  const std::size_t n_arch = spec.presets.size();

  // Phase 1: one pretraining chain per architecture.
  result.pretraining = pretrain_all(spec, bundle, workers);
  const auto& arch = result.pretraining;
  auto pretrained = [&](Strategy s, std::size_t a) -> const models::EncoderState& {
    switch (s) {
      case Strategy::kNone: return arch[a].random;
      case Strategy::kRemedis: return arch[a].contrastive->encoder;
      default: return arch[a].supervised->encoder;
    }
  };
  for (std::size_t a = 0; a < n_arch; ++a) {
    for (Strategy s : strategies) {
      const auto& enc = pretrained(s, a);
      result.encoders.push_back({std::string(strategy_name(s)), spec.presets[a], enc, encoder_hash(enc)});
    }
    if (arch[a].supervised)
      result.loss_histories.emplace_back("supervised." + spec.presets[a], arch[a].supervised->history);
    if (arch[a].contrastive)
      result.loss_histories.emplace_back("contrastive." + spec.presets[a], arch[a].contrastive->history);
  }

  // Phase 2: in-distribution fine-tuning for every (strategy, arch, repeat).
  struct Unit {
    Strategy strategy;
    std::size_t arch;
    std::size_t repeat;
    std::optional<Model> id_model;
    double id_seconds = 0.0;
    std::string error;
  };
  std::vector<Unit> units;
  for (Strategy s : strategies)
    for (std::size_t a = 0; a < n_arch; ++a)
      for (std::size_t r = 0; r < spec.repeats; ++r) units.push_back({s, a, r, std::nullopt, 0.0, {}});

  parallel_for(units.size(), workers, [&](std::size_t u) {
    Unit& unit = units[u];
    try {
      if (hook) hook(unit.strategy, spec.presets[unit.arch], unit.repeat);
      const auto t0 = Clock::now();
      const std::uint64_t seed = derive_seed({spec.seed, kTagId, unit.repeat});
      Model source;
      source.encoder = pretrained(unit.strategy, unit.arch);
      if (unit.strategy == Strategy::kSelfTraining) {
        auto st = self_train(source, bundle.in, bundle.unlabeled, classes, spec.id_grid, spec.id_grid,
                             spec.finetune, seed);
        unit.id_model = std::move(st.student.model);
      } else {
        const GridResult g = grid_search(spec.id_grid, [&](const GridPoint& p, std::size_t) {
          return finetune(source, HeadScenario::kPretrainedRandomHead, bundle.in.train, 1.0, bundle.in.validation,
                          p, spec.finetune, seed).best_val_metric;
        });
        unit.id_model = finetune(source, HeadScenario::kPretrainedRandomHead, bundle.in.train, 1.0,
                                 bundle.in.validation, spec.id_grid[g.best], spec.finetune, seed).model;
      }
      unit.id_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    } catch (const std::exception& e) {
      unit.error = e.what();
      logger().error("unit {}/{}/{} failed: {}", strategy_name(unit.strategy), spec.presets[unit.arch],
                     unit.repeat, e.what());
    }
  });

  // Phase 3: OOD scenario and hyper-parameters chosen once per (strategy,
  // arch) at fraction 1.0 on D_out validation, using the first repeat whose
  // ID model trained.
  struct Candidate {
    HeadScenario scenario;
    GridPoint point;
  };
  std::vector<Candidate> candidates;
  for (HeadScenario sc : spec.ood_scenarios)
    for (const GridPoint& p : spec.ood_grid) candidates.push_back({sc, p});
  std::map<std::pair<Strategy, std::size_t>, OodSelection> selection;
  for (Strategy s : strategies) {
    for (std::size_t a = 0; a < n_arch; ++a) {
      const Unit* ref = nullptr;
      for (const Unit& u : units)
        if (u.strategy == s && u.arch == a && u.id_model) {
          ref = &u;
          break;
        }
      if (!ref) continue;
      const std::uint64_t seed = derive_seed({spec.seed, kTagSelect});
      std::vector<double> metric(candidates.size(), -1.0);
      parallel_for(candidates.size(), workers, [&](std::size_t c) {
        Model source = candidates[c].scenario == HeadScenario::kPretrainedRandomHead
                           ? Model{pretrained(s, a), {}, {}}
                           : *ref->id_model;
        metric[c] = finetune(source, candidates[c].scenario, bundle.out.train, 1.0, bundle.out.validation,
                             candidates[c].point, spec.finetune, seed).best_val_metric;
      });
      const std::size_t best = static_cast<std::size_t>(std::max_element(metric.begin(), metric.end()) - metric.begin());
      OodSelection sel{std::string(strategy_name(s)), spec.presets[a], candidates[best].scenario,
                       candidates[best].point, metric[best]};
      selection[{s, a}] = sel;
      result.selections.push_back(sel);
    }
  }

  // Phase 4: evaluation cells per unit.
  struct Cell {
    std::string scenario;
    double fraction;
  };
  std::vector<Cell> cells{{"in_distribution", 1.0}, {"zero_shot", 0.0}};
  for (double f : spec.fractions)
    if (f > 0.0) cells.push_back({"ood_finetune", f});
  const bool binary = classes == 2;
  std::vector<std::vector<MetricRow>> unit_rows(units.size());
  std::vector<std::vector<PredictionRow>> unit_preds(units.size());
  const double last_fraction = spec.fractions.back();
  parallel_for(units.size(), workers, [&](std::size_t u) {
    Unit& unit = units[u];
    const std::string sname(strategy_name(unit.strategy));
    const std::string& aname = spec.presets[unit.arch];
    const std::uint64_t unit_seed = derive_seed({spec.seed, kTagOod, unit.repeat});
    auto keep_predictions = [&](const Cell& cell, const Evaluation& ev, const data::Dataset& records) {
      for (std::size_t i = 0; i < records.size(); ++i) {
        unit_preds[u].push_back({sname, aname, cell.scenario, cell.fraction, unit.repeat, records[i].id,
                                 records[i].subgroup, records[i].label, ev.predictions[i]});
      }
    };
    auto emit = [&](const Cell& cell, const std::optional<Evaluation>& ev, double seconds) {
      MetricRow row{sname, aname, cell.scenario, cell.fraction, unit.repeat, "accuracy",
                    ev ? std::optional<double>(ev->accuracy) : std::nullopt, unit_seed,
                    spec.record_timing && ev ? std::optional<double>(seconds) : std::nullopt};
      unit_rows[u].push_back(row);
      if (binary) {
        row.metric_name = "auc";
        row.value = ev ? ev->auc : std::nullopt;
        unit_rows[u].push_back(row);
      }
    };
    auto fail_rest = [&](std::size_t from, const std::string& message) {
      for (std::size_t c = from; c < cells.size(); ++c) emit(cells[c], std::nullopt, 0.0);
      unit.error = message;
    };
    if (!unit.id_model) {
      fail_rest(0, unit.error);
      return;
    }
    std::size_t c = 0;
    try {
      auto t0 = Clock::now();
      emit(cells[c], evaluate(*unit.id_model, bundle.in.test), unit.id_seconds);
      ++c;
      t0 = Clock::now();
      const Evaluation zero_shot = evaluate(*unit.id_model, bundle.out.test);
      emit(cells[c], zero_shot, std::chrono::duration<double>(Clock::now() - t0).count());
      keep_predictions(cells[c], zero_shot, bundle.out.test);
      ++c;
      auto sel = selection.find({unit.strategy, unit.arch});
      if (sel == selection.end()) fail(ErrorCode::kCompute, "no OOD selection available");
      for (; c < cells.size(); ++c) {
        t0 = Clock::now();
        Model source = sel->second.scenario == HeadScenario::kPretrainedRandomHead
                           ? Model{pretrained(unit.strategy, unit.arch), {}, {}}
                           : *unit.id_model;
        const auto ft = finetune(source, sel->second.scenario, bundle.out.train, cells[c].fraction,
                                 bundle.out.validation, sel->second.point, spec.finetune, unit_seed);
        const Evaluation ev = evaluate(ft.model, bundle.out.test);
        emit(cells[c], ev, std::chrono::duration<double>(Clock::now() - t0).count());
        if (cells[c].fraction == last_fraction) keep_predictions(cells[c], ev, bundle.out.test);
      }
    } catch (const std::exception& e) {
      logger().error("unit {}/{}/{} failed in cell {}: {}", sname, aname, unit.repeat, c, e.what());
      fail_rest(c, e.what());
    }
  });
  for (std::size_t u = 0; u < units.size(); ++u) {
    result.rows.insert(result.rows.end(), unit_rows[u].begin(), unit_rows[u].end());
    result.predictions.insert(result.predictions.end(), unit_preds[u].begin(), unit_preds[u].end());
    if (!units[u].error.empty()) {
      result.errors.push_back({std::string(strategy_name(units[u].strategy)), spec.presets[units[u].arch],
                               units[u].repeat, units[u].error});
    }
  }
  return result;
}

namespace {

bool row_less(const MetricRow& a, const MetricRow& b) {
  return std::tie(a.strategy, a.arch, a.scenario, a.fraction, a.repeat, a.metric_name) <
         std::tie(b.strategy, b.arch, b.scenario, b.fraction, b.repeat, b.metric_name);
}

std::vector<MetricRow> sorted_rows(const std::vector<MetricRow>& rows) {
  std::vector<MetricRow> sorted = rows;
  std::stable_sort(sorted.begin(), sorted.end(), row_less);
  return sorted;
}

}  // namespace

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = "strategy,arch,scenario,fraction,repeat,metric_name,value,seed,wall_seconds\n";
  for (const auto& r : sorted_rows(rows)) {
    out += r.strategy + ',' + r.arch + ',' + r.scenario + ',' + format_double(r.fraction) + ',' +
           std::to_string(r.repeat) + ',' + r.metric_name + ',' + (r.value ? format_double(*r.value) : "") +
           ',' + std::to_string(r.seed) + ',' + (r.wall_seconds ? format_double(*r.wall_seconds) : "") + '\n';
  }
  return out;
}

std::string metrics_jsonl(const std::vector<MetricRow>& rows) {
  std::string out;
  for (const auto& r : sorted_rows(rows)) {
    nlohmann::ordered_json j{{"strategy", r.strategy}, {"arch", r.arch},       {"scenario", r.scenario},
                             {"fraction", r.fraction}, {"repeat", r.repeat},   {"metric_name", r.metric_name},
                             {"value", nullptr},       {"seed", r.seed},       {"wall_seconds", nullptr}};
    if (r.value) j["value"] = *r.value;
    if (r.wall_seconds) j["wall_seconds"] = *r.wall_seconds;
    out += j.dump() + '\n';
  }
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  for (std::size_t pos; (pos = line.find(',', start)) != std::string::npos; start = pos + 1)
    cols.push_back(line.substr(start, pos - start));
  cols.push_back(line.substr(start));
  return cols;
}

}  // namespace

std::string predictions_csv(const std::vector<PredictionRow>& rows) {
  std::vector<PredictionRow> sorted = rows;
  std::stable_sort(sorted.begin(), sorted.end(), [](const PredictionRow& a, const PredictionRow& b) {
    return std::tie(a.strategy, a.arch, a.scenario, a.fraction, a.repeat, a.record_id) <
           std::tie(b.strategy, b.arch, b.scenario, b.fraction, b.repeat, b.record_id);
  });
  std::string out = "strategy,arch,scenario,fraction,repeat,record_id,subgroup,label,prediction\n";
  for (const auto& r : sorted) {
    out += r.strategy + ',' + r.arch + ',' + r.scenario + ',' + format_double(r.fraction) + ',' +
           std::to_string(r.repeat) + ',' + std::to_string(r.record_id) + ',' + std::to_string(r.subgroup) + ',' +
           std::to_string(r.label) + ',' + std::to_string(r.prediction) + '\n';
  }
  return out;
}

std::vector<PredictionRow> parse_predictions_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("strategy,arch,scenario,fraction,repeat,record_id", 0) != 0) {
    fail(ErrorCode::kInvalidArgument, "predictions csv: missing header");
  }
  std::vector<PredictionRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cols = split_csv_line(line);
    if (cols.size() != 9) fail(ErrorCode::kInvalidArgument, "predictions csv: bad line " + std::to_string(line_no));
    try {
      rows.push_back({cols[0], cols[1], cols[2], std::stod(cols[3]), std::stoul(cols[4]), std::stoull(cols[5]),
                      std::stoi(cols[6]), std::stoi(cols[7]), std::stoi(cols[8])});
    } catch (const std::logic_error&) {
      fail(ErrorCode::kInvalidArgument, "predictions csv: bad number on line " + std::to_string(line_no));
    }
  }
  return rows;
}

std::vector<MetricRow> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("strategy,arch,scenario", 0) != 0) {
    fail(ErrorCode::kInvalidArgument, "metrics csv: missing header");
  }
  std::vector<MetricRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cols = split_csv_line(line);
    if (cols.size() != 9) {
      fail(ErrorCode::kInvalidArgument, "metrics csv: line " + std::to_string(line_no) + " has " +
                                            std::to_string(cols.size()) + " columns");
    }
    try {
      MetricRow r;
      r.strategy = cols[0];
      r.arch = cols[1];
      r.scenario = cols[2];
      r.fraction = std::stod(cols[3]);
      r.repeat = std::stoul(cols[4]);
      r.metric_name = cols[5];
      if (!cols[6].empty()) r.value = std::stod(cols[6]);
      r.seed = std::stoull(cols[7]);
      if (!cols[8].empty()) r.wall_seconds = std::stod(cols[8]);
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      fail(ErrorCode::kInvalidArgument, "metrics csv: bad number on line " + std::to_string(line_no));
    }
  }
  return rows;
}

}  // namespace remedis::pipeline
