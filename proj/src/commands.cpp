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

#include "remedis/commands.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "json.hpp"
#include "remedis/checkpoint.hpp"
#include "remedis/error.hpp"
#include "remedis/log.hpp"
#include "remedis/parallel.hpp"
#include "remedis/pipeline.hpp"
#include "remedis/report.hpp"
#include "remedis/rng.hpp"

namespace remedis::commands {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using pipeline::ArchPretraining;

constexpr std::uint64_t kTagFinetuneCmd = 31;

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << content;
  if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
}

json base_manifest(const config::RunConfig& cfg, const char* command) {
  json m;
  m["tool"] = "remedis";
  m["command"] = command;
  m["schema_version"] = cfg.schema_version;
  m["seed"] = cfg.protocol.seed;
  m["config_hash"] = config::config_hash(cfg);
  m["config"] = json::parse(config::to_json(cfg));
  m["notes"] = json::array({
      "every random stream is seeded by derive_seed(seed, tag, ...) (splitmix64)",
      "contrastive checkpoint = minimum eval-batch loss over steps in [ceil(0.999 M), M], earliest on ties",
      "wall_seconds is empty unless record_timing is set",
  });
  return m;
}

std::string loss_history_csv(const std::vector<ArchPretraining>& arch) {
  std::string s = "phase,arch,step,loss\n";
  auto put = [&](const char* phase, const std::string& a, const std::vector<pipeline::LossPoint>& h) {
    for (const auto& p : h) s += fmt::format("{},{},{},{:.17g}\n", phase, a, p.step, p.loss);
  };
  for (const auto& a : arch) {
    if (a.supervised) put("supervised", a.arch, a.supervised->history);
    if (a.contrastive) put("contrastive", a.arch, a.contrastive->history);
  }
  return s;
}

std::string checkpoint_losses_csv(const std::vector<ArchPretraining>& arch, std::size_t max_steps) {
  std::string s = "arch,step,eval_loss,in_window,selected\n";
  const std::size_t lo = pipeline::window_start(max_steps);
  for (const auto& a : arch) {
    if (!a.contrastive) continue;
    for (const auto& c : a.contrastive->checkpoints) {
      s += fmt::format("{},{},{:.17g},{},{}\n", a.arch, c.step, c.loss, c.step >= lo ? 1 : 0,
                       c.step == a.contrastive->selected_step ? 1 : 0);
    }
  }
  return s;
}

json encoders_json(const std::vector<ArchPretraining>& arch) {
  json out = json::array();
  auto put = [&](const std::string& a, const char* kind, const models::EncoderState& e) {
    out.push_back({{"arch", a}, {"encoder", kind}, {"hash", pipeline::encoder_hash(e)}});
  };
  for (const auto& a : arch) {
    put(a.arch, "random", a.random);
    if (a.supervised) put(a.arch, "supervised", a.supervised->encoder);
    if (a.contrastive) put(a.arch, "remedis", a.contrastive->encoder);
  }
  return out;
}

void write_checkpoints(const std::vector<ArchPretraining>& arch, const fs::path& dir) {
  make_dir(dir);
  for (const auto& a : arch) {
    save_checkpoint(dir / (a.arch + ".none.ckpt"), encoder_checkpoint(a.random, 0));
    if (a.supervised) {
      save_checkpoint(dir / (a.arch + ".supervised.ckpt"),
                      encoder_checkpoint(a.supervised->encoder, a.supervised->history.size()));
    }
    if (a.contrastive) {
      save_checkpoint(dir / (a.arch + ".remedis.ckpt"),
                      encoder_checkpoint(a.contrastive->encoder, a.contrastive->selected_step));
      for (const auto& c : a.contrastive->checkpoints) {
        if (!c.snapshot) continue;
        save_checkpoint(dir / fmt::format("{}.contrastive.step{}.ckpt", a.arch, c.step),
                        encoder_checkpoint(*c.snapshot, c.step));
      }
    }
  }
}

json bundle_json(const data::TaskBundle& bundle) {
  return {{"bundle_hash", data::bundle_hash(bundle)}, {"fingerprint_hash", data::fingerprint(bundle).hash()}};
}

}  // namespace

void filter_strategies(config::RunConfig& cfg, const std::string& filter) {
  std::set<pipeline::Strategy> wanted;
  std::stringstream in(filter);
  for (std::string name; std::getline(in, name, ',');) {
    if (name.empty()) continue;
    wanted.insert(pipeline::parse_strategy(name));
  }
  require(!wanted.empty(), "strategy filter: no strategy named");
  auto& list = cfg.protocol.strategies;
  std::erase_if(list, [&](pipeline::Strategy s) { return !wanted.contains(s); });
  require(!list.empty(), "strategy filter: '" + filter + "' matches no configured strategy");
}

std::size_t resolved_workers(const config::RunConfig& cfg) {
  return cfg.workers == 0 ? default_workers() : cfg.workers;
}

void gen_data(const config::RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  const data::TaskBundle bundle = pipeline::protocol_bundle(cfg.protocol);
  make_dir(out);
  data::save_bundle(bundle, out / "bundle");
  json m = base_manifest(cfg, "gen-data");
  m["bundle"] = bundle_json(bundle);
  write_file(out / "manifest.json", m.dump(2) + "\n");
}

void pretrain(const config::RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  const data::TaskBundle bundle = pipeline::protocol_bundle(cfg.protocol);
  const auto arch = pipeline::pretrain_all(cfg.protocol, bundle, resolved_workers(cfg));
  make_dir(out);
  write_checkpoints(arch, out / "checkpoints");
  write_file(out / "loss_history.csv", loss_history_csv(arch));
  write_file(out / "checkpoint_losses.csv", checkpoint_losses_csv(arch, cfg.protocol.contrastive.max_steps));
  json m = base_manifest(cfg, "pretrain");
  m["bundle"] = bundle_json(bundle);
  m["encoders"] = encoders_json(arch);
  write_file(out / "manifest.json", m.dump(2) + "\n");
}

void finetune(const config::RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  pipeline::ProtocolSpec spec = cfg.protocol;
  spec.strategies.resize(1);
  spec.presets.resize(1);
  const data::TaskBundle bundle = pipeline::protocol_bundle(spec);
  const auto arch = pipeline::pretrain_all(spec, bundle, 1);
  const auto& a = arch.front();
  const pipeline::Strategy strategy = spec.strategies.front();
  const models::EncoderState& encoder = strategy == pipeline::Strategy::kNone       ? a.random
                                        : strategy == pipeline::Strategy::kRemedis ? a.contrastive->encoder
                                                                                   : a.supervised->encoder;
  const std::uint64_t seed = derive_seed({spec.seed, kTagFinetuneCmd});

  // In-distribution model for the scenarios that start from one.
  models::Model source{encoder, {}, {}};
  const auto id = pipeline::finetune(source, pipeline::HeadScenario::kPretrainedRandomHead, bundle.in.train, 1.0,
                                     bundle.in.validation, spec.id_grid.front(), spec.finetune, seed);
  const double fraction = spec.fractions.back();

  struct Row {
    pipeline::HeadScenario scenario;
    pipeline::GridPoint point;
    double val = 0.0;
    double test = 0.0;
    std::size_t best_step = 0;
  };
  std::vector<Row> rows;
  for (auto sc : spec.ood_scenarios)
    for (const auto& p : spec.ood_grid) rows.push_back({sc, p});
  parallel_for(rows.size(), resolved_workers(cfg), [&](std::size_t i) {
    Row& r = rows[i];
    const models::Model& start = r.scenario == pipeline::HeadScenario::kPretrainedRandomHead ? source : id.model;
    const auto ft = pipeline::finetune(start, r.scenario, bundle.out.train, fraction, bundle.out.validation, r.point,
                                       spec.finetune, seed);
    r.val = ft.best_val_metric;
    r.best_step = ft.best_step;
    r.test = pipeline::evaluate(ft.model, bundle.out.test).accuracy;
  });
  std::string csv = "strategy,arch,scenario,fraction,learning_rate,weight_decay,val_accuracy,test_accuracy,best_step\n";
  for (const auto& r : rows) {
    csv += fmt::format("{},{},{},{:g},{:.17g},{:.17g},{:.17g},{:.17g},{}\n", pipeline::strategy_name(strategy), a.arch,
                       pipeline::scenario_name(r.scenario), fraction, r.point.learning_rate, r.point.weight_decay,
                       r.val, r.test, r.best_step);
  }
  make_dir(out);
  write_file(out / "finetune.csv", csv);
  json m = base_manifest(cfg, "finetune");
  m["bundle"] = bundle_json(bundle);
  m["id_validation_accuracy"] = id.best_val_metric;
  write_file(out / "manifest.json", m.dump(2) + "\n");
}

ProtocolOutcome protocol(const config::RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  const data::TaskBundle bundle = pipeline::protocol_bundle(cfg.protocol);
  const auto result = pipeline::run_protocol(cfg.protocol, bundle, resolved_workers(cfg));
  make_dir(out);
  write_file(out / "metrics.csv", pipeline::metrics_csv(result.rows));
  write_file(out / "metrics.jsonl", pipeline::metrics_jsonl(result.rows));
  write_file(out / "predictions.csv", pipeline::predictions_csv(result.predictions));
  write_file(out / "loss_history.csv", loss_history_csv(result.pretraining));
  write_file(out / "checkpoint_losses.csv",
             checkpoint_losses_csv(result.pretraining, cfg.protocol.contrastive.max_steps));
  write_checkpoints(result.pretraining, out / "checkpoints");

  json sel = json::array();
  for (const auto& s : result.selections) {
    sel.push_back({{"strategy", s.strategy},
                   {"arch", s.arch},
                   {"scenario", pipeline::scenario_name(s.scenario)},
                   {"learning_rate", s.point.learning_rate},
                   {"weight_decay", s.point.weight_decay},
                   {"validation_accuracy", s.val_metric}});
  }
  write_file(out / "selection.json", sel.dump(2) + "\n");

  json m = base_manifest(cfg, "protocol");
  m["bundle"] = {{"bundle_hash", result.bundle_hash}, {"fingerprint_hash", result.fingerprint_hash}};
  m["encoders"] = encoders_json(result.pretraining);
  json errors = json::array();
  for (const auto& e : result.errors) {
    errors.push_back({{"strategy", e.strategy}, {"arch", e.arch}, {"repeat", e.repeat}, {"message", e.message}});
  }
  m["errors"] = errors;
  write_file(out / "manifest.json", m.dump(2) + "\n");
  if (!result.errors.empty()) logger().warn("{} unit(s) failed; see manifest.json", result.errors.size());
  return {result.rows.size(), result.errors.size()};
}

ReportOutcome report(const fs::path& results, const fs::path& out) {
  const report::Report r = report::build_report(report::load_results(results));
  report::write_report(r, out);
  return {r.complete(), r.missing};
}

}  // namespace remedis::commands
