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

#include <algorithm>
#include <atomic>
#include <cmath>
#include <set>

#include "doctest.h"
#include "remedis/error.hpp"
#include "remedis/pipeline.hpp"

using namespace remedis;
using namespace remedis::pipeline;

namespace {

data::BaseSpec small_base() {
  data::BaseSpec b;
  b.image_size = 16;
  b.num_classes = 2;
  b.unlabeled = 64;
  b.in_sizes = {80, 40, 40};
  b.out_sizes = {80, 40, 40};
  b.upstream_classes = 3;
  b.upstream_sizes = {240, 0, 90};
  return b;
}

data::ShiftSpec small_shift() {
  data::ShiftSpec s;
  s.technology.contrast = 0.7;
  s.technology.blur_sigma = 0.8;
  return s;
}

const data::TaskBundle& bundle() {
  static const data::TaskBundle b = data::generate_task(5, small_base(), small_shift());
  return b;
}

models::EncoderConfig tiny() { return models::EncoderConfig::from_preset("tiny", 16, 1); }

FinetuneConfig quick_finetune(std::size_t steps) {
  FinetuneConfig c;
  c.max_steps = steps;
  c.decay_steps = std::max<std::size_t>(1, steps);
  c.eval_every = 20;
  c.batch_size = 16;
  return c;
}

models::Model random_model(int classes, std::uint64_t seed) {
  Rng rng(seed);
  models::Model m;
  m.encoder = models::build_encoder(tiny(), rng);
  m.head_config = models::HeadConfig{m.encoder.config.embed_dim, classes, false, 16};
  m.head = models::build_classification_head(m.head_config, models::HeadInit::kRandom, rng);
  return m;
}

bool same_params(const models::Params& a, const models::Params& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a) {
    auto it = b.find(name);
    if (it == b.end() || it->second.shape() != t.shape()) return false;
    if (!std::equal(t.data().begin(), t.data().end(), it->second.data().begin())) return false;
  }
  return true;
}

ProtocolSpec tiny_protocol() {
  ProtocolSpec s;
  s.base = small_base();
  s.shift = small_shift();
  s.strategies = {Strategy::kSupervised};
  s.presets = {"tiny"};
  s.supervised.steps = 5;
  s.supervised.batch_size = 16;
  s.contrastive.max_steps = 4;
  s.contrastive.loss.batch_pairs = 8;
  s.finetune = quick_finetune(4);
  s.ood_scenarios = {HeadScenario::kFinetunedRandomHead};
  s.fractions = {0.0, 1.0};
  s.repeats = 2;
  s.seed = 3;
  return s;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("checkpoint bookkeeping") {
    CHECK(window_start(10000) == 9990);
    CHECK(window_start(1) == 1);
    CHECK(window_start(5) == 5);
    CHECK(window_start(1001) == 1000);
    const auto steps = checkpoint_steps(10000, 5);
    CHECK(steps.size() == 10000 / 5 + 1);
    CHECK(steps.back() == 10000);
    CHECK(checkpoint_steps(10, 3) == std::vector<std::size_t>{1, 4, 7, 10});
    CHECK(std::adjacent_find(steps.begin(), steps.end(), std::greater_equal<>()) == steps.end());
    CHECK_THROWS_AS(checkpoint_steps(10, 0), Error);
  }

  TEST_CASE("checkpoint selection examples") {
    std::vector<CheckpointRecord> recs{{9985, 0.1, {}}, {9990, 0.52, {}}, {9995, 0.48, {}}, {10000, 0.50, {}}};
    CHECK(select_checkpoint(recs, 10000).step == 9995);
    std::vector<CheckpointRecord> one{{9000, 0.1, {}}, {10000, 0.9, {}}};
    CHECK(select_checkpoint(one, 10000).step == 10000);
    std::vector<CheckpointRecord> tie{{9992, 0.3, {}}, {9996, 0.3, {}}, {10000, 0.31, {}}};
    CHECK(select_checkpoint(tie, 10000).step == 9992);
    std::vector<CheckpointRecord> empty{{9000, 0.1, {}}, {9989, 0.2, {}}};
    try {
      select_checkpoint(empty, 10000);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kInvalidArgument);
      CHECK(std::string(e.what()).find("densely") != std::string::npos);
    }
  }

  TEST_CASE("supervised pretraining beats chance by 20 points") {
    SupervisedConfig cfg;
    cfg.steps = 150;
    cfg.batch_size = 32;
    cfg.learning_rate = 0.2;
    for (std::uint64_t seed : {1, 2, 3}) {
      const auto r = supervised_pretrain(tiny(), bundle().upstream, cfg, seed);
      CAPTURE(seed);
      CHECK(r.heldout_accuracy > 1.0 / 3.0 + 0.20);
      CHECK(r.encoder.provenance == models::Provenance::kSupervisedPretrained);
      CHECK(r.history.size() == cfg.steps);
    }
  }

  TEST_CASE("supervised pretraining: zero steps and determinism") {
    SupervisedConfig cfg;
    cfg.steps = 0;
    const auto a = supervised_pretrain(tiny(), bundle().upstream, cfg, 9);
    CHECK(a.encoder.provenance == models::Provenance::kRandom);
    CHECK(a.history.empty());
    cfg.steps = 3;
    const auto b = supervised_pretrain(tiny(), bundle().upstream, cfg, 9);
    const auto c = supervised_pretrain(tiny(), bundle().upstream, cfg, 9);
    CHECK(same_params(b.encoder.params, c.encoder.params));
    CHECK_FALSE(same_params(a.encoder.params, b.encoder.params));
  }

  TEST_CASE("supervised pretraining rejects bad inputs") {
    SupervisedConfig cfg;
    cfg.steps = 2;
    data::Splits one_label;
    one_label.train = {bundle().upstream.train[0]};
    one_label.train[0].label = 0;
    CHECK_THROWS_AS(supervised_pretrain(tiny(), one_label, cfg, 1), Error);
    cfg.learning_rate = 1e12;
    cfg.steps = 50;
    try {
      supervised_pretrain(tiny(), bundle().upstream, cfg, 1);
      FAIL("expected divergence");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kNumericOverflow);
      CHECK(std::string(e.what()).find("step") != std::string::npos);
    }
  }

  TEST_CASE("contrastive pretraining lowers the loss on a toy set") {
    SupervisedConfig sup;
    sup.steps = 20;
    const auto base = supervised_pretrain(tiny(), bundle().upstream, sup, 4).encoder;
    data::Dataset toy(bundle().unlabeled.begin(), bundle().unlabeled.begin() + 16);
    ContrastivePretrainConfig cfg;
    cfg.loss.batch_pairs = 16;
    cfg.loss.temperature = 0.2;
    cfg.max_steps = 200;
    cfg.checkpoint_every = 1;
    cfg.optimizer.kind = optim::OptimizerKind::kAdam;
    cfg.learning_rate = 3e-3;
    cfg.policy.color_strength = 0.5;
    cfg.policy.crop_area = {0.2, 1.0};
    for (std::uint64_t seed : {1, 2, 3}) {
      CAPTURE(seed);
      const auto r = contrastive_pretrain(base, toy, cfg, seed);
      REQUIRE(r.checkpoints.size() == cfg.max_steps + 1);
      const auto& chosen = select_checkpoint(r.checkpoints, cfg.max_steps);
      CHECK(chosen.step == r.selected_step);
      CHECK(chosen.loss < r.checkpoints.front().loss);
      for (const auto& c : r.checkpoints) {
        if (c.step >= window_start(cfg.max_steps)) CHECK(chosen.loss <= c.loss);
        CHECK(c.snapshot.has_value() == (c.step >= window_start(cfg.max_steps)));
      }
      CHECK(r.encoder.provenance == models::Provenance::kContrastivePretrained);
      CHECK(r.base_hash == encoder_hash(base));
      CHECK_NOTHROW(verify_chain(base, r));
    }
  }

  TEST_CASE("contrastive checkpoint count and chain checks") {
    SupervisedConfig sup;
    sup.steps = 2;
    const auto base = supervised_pretrain(tiny(), bundle().upstream, sup, 4).encoder;
    ContrastivePretrainConfig cfg;
    cfg.loss.batch_pairs = 8;
    cfg.max_steps = 7;
    cfg.checkpoint_every = 3;
    const auto r = contrastive_pretrain(base, bundle().unlabeled, cfg, 2);
    CHECK(r.checkpoints.size() == 7 / 3 + 1);
    CHECK(r.checkpoints.back().step == 7);
    CHECK(r.history.size() == 7);

    // Adapted from a different base.
    const auto other = supervised_pretrain(tiny(), bundle().upstream, sup, 5).encoder;
    CHECK_THROWS_AS(verify_chain(other, r), Error);
    models::EncoderState random = base;
    random.provenance = models::Provenance::kRandom;
    CHECK_THROWS_AS(verify_chain(random, r), Error);
    CHECK_THROWS_AS(contrastive_pretrain(base, data::Dataset{}, cfg, 2), Error);
  }

  TEST_CASE("finetune with zero steps returns the init") {
    const models::Model source = random_model(2, 8);
    const auto r = finetune(source, HeadScenario::kFinetunedKeepHead, bundle().out.train, 1.0,
                            bundle().out.validation, GridPoint{0.1, 0.0}, quick_finetune(0), 1);
    CHECK(same_params(r.model.encoder.params, source.encoder.params));
    CHECK(same_params(r.model.head, source.head));
    CHECK(r.best_step == 0);
    const auto zero_shot = evaluate(source, bundle().out.validation);
    CHECK(r.best_val_metric == zero_shot.accuracy);
    CHECK(evaluate(r.model, bundle().out.test).predictions == evaluate(source, bundle().out.test).predictions);
  }

  TEST_CASE("finetune reaches 0.95 on a separable task") {
    data::BaseSpec b = small_base();
    b.texture_noise = 0.0;
    b.amplitude = 0.6;
    b.in_sizes = {160, 60, 20};
    const auto easy = data::generate_task(17, b, data::ShiftSpec{});
    for (std::uint64_t seed : {1, 2, 3}) {
      CAPTURE(seed);
      const models::Model source = random_model(2, seed);
      const auto r = finetune(source, HeadScenario::kFinetunedRandomHead, easy.in.train, 1.0, easy.in.validation,
                              GridPoint{0.05, 0.0}, quick_finetune(200), seed);
      CHECK(r.best_val_metric >= 0.95);
      // The returned checkpoint reproduces the reported metric.
      CHECK(evaluate(r.model, easy.in.validation).accuracy == r.best_val_metric);
      double best = 0.0;
      for (const auto& p : r.val_history) best = std::max(best, p.loss);
      CHECK(best == r.best_val_metric);
      CHECK(r.model.encoder.provenance == models::Provenance::kFineTuned);
    }
  }

  TEST_CASE("finetune errors and scenarios") {
    const models::Model source = random_model(2, 8);
    const auto cfg = quick_finetune(2);
    CHECK_THROWS_AS(finetune(source, HeadScenario::kFinetunedRandomHead, bundle().out.train, 0.0,
                             bundle().out.validation, GridPoint{}, cfg, 1), Error);
    CHECK_THROWS_AS(finetune(source, HeadScenario::kFinetunedRandomHead, data::Dataset{}, 1.0,
                             bundle().out.validation, GridPoint{}, cfg, 1), Error);
    models::Model headless;
    headless.encoder = source.encoder;
    CHECK_THROWS_AS(scenario_init(headless, HeadScenario::kFinetunedKeepHead, 2, cfg, 1), Error);
    const auto kept = scenario_init(source, HeadScenario::kFinetunedKeepHead, 2, cfg, 1);
    CHECK(same_params(kept.head, source.head));
    const auto fresh = scenario_init(source, HeadScenario::kFinetunedRandomHead, 2, cfg, 1);
    CHECK(same_params(fresh.encoder.params, source.encoder.params));
    CHECK_FALSE(same_params(fresh.head, source.head));
    for (auto s : {HeadScenario::kPretrainedRandomHead, HeadScenario::kFinetunedKeepHead,
                   HeadScenario::kFinetunedRandomHead}) {
      CHECK(parse_scenario(scenario_name(s)) == s);
    }
    CHECK_THROWS_AS(parse_scenario("bogus"), Error);
  }

  TEST_CASE("linear probe leaves the encoder untouched") {
    const models::Model source = random_model(2, 8);
    auto cfg = quick_finetune(5);
    cfg.linear_probe = true;
    cfg.eval_every = 1;
    const auto r = finetune(source, HeadScenario::kFinetunedRandomHead, bundle().out.train, 1.0,
                            bundle().out.validation, GridPoint{0.5, 0.0}, cfg, 1);
    CHECK(same_params(r.model.encoder.params, source.encoder.params));
  }

  TEST_CASE("grid search") {
    const auto single = grid_search({{0.1, 0.0}}, [](const GridPoint&, std::size_t) { return 0.3; });
    CHECK(single.best == 0);
    const std::vector<double> metric{0.2, 0.7, 0.5, 0.7};
    const auto grid = make_grid({1e-3, 1e-2}, {0.0, 1e-4});
    REQUIRE(grid.size() == 4);
    CHECK(grid[1].learning_rate == 1e-3);
    CHECK(grid[1].weight_decay == 1e-4);
    const auto r = grid_search(grid, [&](const GridPoint&, std::size_t i) { return metric[i]; }, 3);
    CHECK(r.best == 1);
    std::vector<std::size_t> order;
    for (const auto& e : r.leaderboard) order.push_back(e.index);
    CHECK(order == std::vector<std::size_t>{1, 3, 2, 0});
    CHECK_THROWS_AS(grid_search({}, [](const GridPoint&, std::size_t) { return 0.0; }), Error);
  }

  TEST_CASE("soft labels are row-stochastic") {
    Rng rng(3);
    Tensor logits({7, 4});
    for (double& v : logits.data()) v = rng.normal(0.0, 5.0);
    const Tensor p = soft_labels(logits);
    for (std::size_t i = 0; i < 7; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 4; ++j) {
        CHECK(p[i * 4 + j] >= 0.0);
        sum += p[i * 4 + j];
      }
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }

  TEST_CASE("confident teacher gives one-hot soft labels") {
    Tensor logits({3, 3});
    const int labels[] = {2, 0, 1};
    for (std::size_t i = 0; i < 3; ++i) logits[i * 3 + static_cast<std::size_t>(labels[i])] = 800.0;
    const Tensor p = soft_labels(logits);
    const Tensor expected = ad::one_hot(labels, 3);
    CHECK(std::equal(p.data().begin(), p.data().end(), expected.data().begin()));
  }

  TEST_CASE("self-training with empty D_u equals plain fine-tuning") {
    const models::Model init = random_model(2, 12);
    models::Model bare;
    bare.encoder = init.encoder;
    const auto cfg = quick_finetune(6);
    const std::vector<GridPoint> grid{{0.05, 0.0}};
    const auto st = self_train(bare, bundle().in, data::Dataset{}, 2, grid, grid, cfg, 21);
    const auto teacher = st.teacher;
    CHECK(same_params(st.student.model.encoder.params, teacher.model.encoder.params));
    CHECK(same_params(st.student.model.head, teacher.model.head));

    data::Dataset few(bundle().unlabeled.begin(), bundle().unlabeled.begin() + 10);
    const auto with_u = self_train(bare, bundle().in, few, 2, grid, grid, cfg, 21);
    REQUIRE(with_u.unlabeled_targets.dim(0) == 10);
    CHECK_FALSE(same_params(with_u.student.model.head, with_u.teacher.model.head));
  }

  TEST_CASE("protocol bookkeeping") {
    const ProtocolSpec spec = tiny_protocol();
    const auto r = run_protocol(spec, bundle(), 1);
    CHECK(r.errors.empty());
    std::size_t accuracy_cells = 0;
    for (const auto& row : r.rows) accuracy_cells += row.metric_name == "accuracy";
    CHECK(accuracy_cells == 2 * (1 + 1 + 1));
    std::set<std::uint64_t> seeds;
    for (const auto& row : r.rows) {
      CHECK(row.value.has_value());
      CHECK_FALSE(row.wall_seconds.has_value());
      seeds.insert(row.seed);
    }
    CHECK(seeds.size() == 2);
    CHECK(r.selections.size() == 1);
    CHECK(r.bundle_hash == data::bundle_hash(bundle()));
  }

  TEST_CASE("zero-shot cell equals direct evaluation of the ID model") {
    ProtocolSpec spec = tiny_protocol();
    spec.ood_scenarios = {HeadScenario::kFinetunedKeepHead};
    spec.finetune.max_steps = 0;
    spec.id_grid = {{0.05, 0.0}};
    const auto r = run_protocol(spec, bundle(), 1);
    // With a zero-step budget the ID model is the pretrained encoder plus the
    // scenario head, which we can rebuild independently.
    const auto sup = supervised_pretrain(models::EncoderConfig::from_preset("tiny", 16, 1), bundle().upstream,
                                         spec.supervised, derive_seed({spec.seed, 12, 0}));
    REQUIRE(r.encoders.size() == 1);
    CHECK(r.encoders[0].hash == encoder_hash(sup.encoder));
    for (const auto& row : r.rows) {
      if (row.scenario != "zero_shot" || row.metric_name != "accuracy") continue;
      models::Model source;
      source.encoder = sup.encoder;
      const auto id_model = finetune(source, HeadScenario::kPretrainedRandomHead, bundle().in.train, 1.0,
                                     bundle().in.validation, spec.id_grid[0], spec.finetune,
                                     derive_seed({spec.seed, 18, row.repeat}))
                                .model;
      CHECK(*row.value == evaluate(id_model, bundle().out.test).accuracy);
      // keep-head with zero steps predicts exactly like the ID model
      const auto ood = finetune(id_model, HeadScenario::kFinetunedKeepHead, bundle().out.train, 1.0,
                                bundle().out.validation, spec.ood_grid[0], spec.finetune, 1);
      CHECK(evaluate(ood.model, bundle().out.test).predictions ==
            evaluate(id_model, bundle().out.test).predictions);
    }
  }

  TEST_CASE("a failing unit does not abort the sweep") {
    ProtocolSpec spec = tiny_protocol();
    spec.repeats = 3;
    const auto r = run_protocol(spec, bundle(), 2, [](Strategy, const std::string&, std::size_t repeat) {
      if (repeat == 1) throw Error(ErrorCode::kCompute, "injected");
    });
    REQUIRE(r.errors.size() == 1);
    CHECK(r.errors[0].repeat == 1);
    CHECK(r.errors[0].message == "injected");
    std::size_t missing = 0, present = 0;
    for (const auto& row : r.rows) {
      if (row.metric_name == "accuracy") (row.value ? present : missing) += 1;
    }
    CHECK(missing == 3);
    CHECK(present == 6);
  }

  TEST_CASE("protocol output is independent of worker count") {
    ProtocolSpec spec = tiny_protocol();
    spec.strategies = {Strategy::kNone, Strategy::kRemedis};
    const auto a = run_protocol(spec, bundle(), 1);
    const auto b = run_protocol(spec, bundle(), 3);
    CHECK(metrics_csv(a.rows) == metrics_csv(b.rows));
    CHECK(metrics_jsonl(a.rows) == metrics_jsonl(b.rows));
  }

  TEST_CASE("protocol validation") {
    ProtocolSpec spec = tiny_protocol();
    spec.repeats = 1;
    CHECK_THROWS_AS(spec.validate(), Error);
    spec = tiny_protocol();
    spec.fractions = {0.1, 1.0};
    CHECK_THROWS_AS(spec.validate(), Error);
    spec = tiny_protocol();
    spec.fractions = {0.0, 0.5, 0.5, 1.0};
    CHECK_THROWS_AS(spec.validate(), Error);
    spec = tiny_protocol();
    spec.presets = {"huge"};
    CHECK_THROWS_AS(spec.validate(), Error);
    for (auto s : {Strategy::kNone, Strategy::kSupervised, Strategy::kRemedis, Strategy::kSelfTraining}) {
      CHECK(parse_strategy(strategy_name(s)) == s);
    }
  }

  TEST_CASE("metrics csv round trip") {
    std::vector<MetricRow> rows{
        {"supervised", "tiny", "zero_shot", 0.0, 1, "accuracy", 0.1 + 0.2, 42, std::nullopt},
        {"remedis", "tiny", "ood_finetune", 0.1, 0, "accuracy", std::nullopt, 7, 1.25},
    };
    const std::string csv = metrics_csv(rows);
    CHECK(csv.rfind("strategy,arch,scenario,fraction,repeat,metric_name,value,seed,wall_seconds\n", 0) == 0);
    const auto back = parse_metrics_csv(csv);
    REQUIRE(back.size() == 2);
    CHECK(back[0].strategy == "remedis");
    CHECK_FALSE(back[0].value.has_value());
    CHECK(*back[0].wall_seconds == 1.25);
    CHECK(*back[1].value == 0.1 + 0.2);
    CHECK(metrics_csv(back) == csv);
    CHECK_THROWS_AS(parse_metrics_csv("nope\n"), Error);
    CHECK_THROWS_AS(parse_metrics_csv(csv + "a,b\n"), Error);
  }
}
