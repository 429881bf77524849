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

// Command implementations behind the CLI: each one reads a resolved run
// configuration and writes its artifacts into an output directory.

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "remedis/config.hpp"

namespace remedis::commands {

// Keeps only the named strategies (comma separated), in config order.
void filter_strategies(config::RunConfig& cfg, const std::string& filter);

std::size_t resolved_workers(const config::RunConfig& cfg);

// bundle/ (see data::save_bundle) plus manifest.json.
void gen_data(const config::RunConfig& cfg, const std::filesystem::path& out);

// checkpoints/<arch>.<strategy>.ckpt for every pretrained encoder, the
// in-window contrastive snapshots, loss_history.csv, checkpoint_losses.csv
// and manifest.json.
void pretrain(const config::RunConfig& cfg, const std::filesystem::path& out);

// One OOD fine-tune cell at the largest fraction for the first strategy and
// preset, swept over every scenario and ood_grid point. Writes finetune.csv.
void finetune(const config::RunConfig& cfg, const std::filesystem::path& out);

struct ProtocolOutcome {
  std::size_t rows = 0;
  std::size_t failed_units = 0;
};

// metrics.csv, metrics.jsonl, predictions.csv, loss_history.csv,
// selection.json, checkpoints/ and manifest.json.
ProtocolOutcome protocol(const config::RunConfig& cfg, const std::filesystem::path& out);

struct ReportOutcome {
  bool complete = false;
  std::vector<std::string> missing;
};

ReportOutcome report(const std::filesystem::path& results, const std::filesystem::path& out);

}  // namespace remedis::commands
