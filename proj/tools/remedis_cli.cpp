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

// remedis command-line tool. Talks to the library only through remedis.h.

#include <cstdio>
#include <memory>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "remedis/remedis.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCompute = 1;
constexpr int kExitInvalid = 2;

int exit_code(remedis_status s) {
  switch (s) {
    case REMEDIS_OK: return kExitOk;
    case REMEDIS_INVALID_ARGUMENT:
    case REMEDIS_SHAPE_MISMATCH:
    case REMEDIS_IO: return kExitInvalid;
    default: return kExitCompute;
  }
}

int report_status(const char* what, remedis_status s) {
  if (s != REMEDIS_OK) std::fprintf(stderr, "remedis %s: %s: %s\n", what, remedis_status_name(s), remedis_last_error());
  return exit_code(s);
}

struct ConfigDeleter {
  void operator()(remedis_config* c) const { remedis_config_free(c); }
};
using ConfigPtr = std::unique_ptr<remedis_config, ConfigDeleter>;

struct RunOptions {
  std::string config;
  std::string out;
  std::optional<std::size_t> workers;
  std::optional<std::uint64_t> seed;
  std::string strategy;
};

void add_run_options(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("--config", o.config, "JSON run configuration (defaults when omitted)")->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "output directory (overrides output_dir)");
  cmd->add_option("--workers", o.workers, "worker threads, 0 = all cores");
  cmd->add_option("--seed", o.seed, "top-level seed (overrides the config)");
  cmd->add_option("--strategy", o.strategy, "comma separated strategies to keep");
}

// Returns a nonzero exit code on failure.
int load(const RunOptions& o, ConfigPtr& cfg) {
  remedis_config* raw = nullptr;
  remedis_status s = o.config.empty() ? remedis_config_default(&raw) : remedis_config_load(o.config.c_str(), &raw);
  if (s != REMEDIS_OK) return report_status("config", s);
  cfg.reset(raw);
  if (o.seed) s = remedis_config_set_seed(raw, *o.seed);
  if (s == REMEDIS_OK && o.workers) s = remedis_config_set_workers(raw, *o.workers);
  if (s == REMEDIS_OK && !o.out.empty()) s = remedis_config_set_output_dir(raw, o.out.c_str());
  if (s == REMEDIS_OK && !o.strategy.empty()) s = remedis_config_filter_strategies(raw, o.strategy.c_str());
  return report_status("config", s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"remedis: supervised + contrastive pretraining, fine-tuning and reporting"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(remedis_version()));

  RunOptions gen, pre, fine, proto;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a task bundle and its fingerprint");
  add_run_options(gen_cmd, gen);
  auto* pre_cmd = app.add_subcommand("pretrain", "supervised and contrastive pretraining");
  add_run_options(pre_cmd, pre);
  auto* fine_cmd = app.add_subcommand("finetune", "one OOD fine-tune cell over the ood grid");
  add_run_options(fine_cmd, fine);
  auto* proto_cmd = app.add_subcommand("protocol", "full evaluation protocol, raw metric rows");
  add_run_options(proto_cmd, proto);
  auto* print_cmd = app.add_subcommand("print-config", "print the resolved configuration");
  RunOptions print;
  add_run_options(print_cmd, print);

  std::string results_dir, report_out;
  auto* report_cmd = app.add_subcommand("report", "aggregate a results directory");
  report_cmd->add_option("results_dir", results_dir, "directory written by protocol")->required();
  report_cmd->add_option("--out", report_out, "report directory (default <results_dir>/report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  if (*report_cmd) {
    const remedis_status s = remedis_report(results_dir.c_str(), report_out.empty() ? nullptr : report_out.c_str());
    return report_status("report", s);
  }

  using Command = remedis_status (*)(const remedis_config*, const char*);
  struct Entry {
    CLI::App* cmd;
    RunOptions* opts;
    Command run;
    const char* name;
  };
  const Entry entries[] = {{gen_cmd, &gen, remedis_gen_data, "gen-data"},
                           {pre_cmd, &pre, remedis_pretrain, "pretrain"},
                           {fine_cmd, &fine, remedis_finetune, "finetune"},
                           {proto_cmd, &proto, remedis_protocol, "protocol"},
                           {print_cmd, &print, nullptr, "print-config"}};
  for (const Entry& e : entries) {
    if (!*e.cmd) continue;
    ConfigPtr cfg;
    if (const int rc = load(*e.opts, cfg); rc != kExitOk) return rc;
    if (!e.run) {
      std::printf("%s\n", remedis_config_json(cfg.get()));
      return kExitOk;
    }
    const int rc = report_status(e.name, e.run(cfg.get(), nullptr));
    if (rc != kExitInvalid) std::printf("%s\n", remedis_config_output_dir(cfg.get()));
    return rc;
  }
  return kExitInvalid;
}
