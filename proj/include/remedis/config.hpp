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

// JSON run configuration. Missing keys keep their defaults; unknown keys are
// rejected at every level so typos do not silently fall back.

#include <filesystem>
#include <string>
#include <vector>

#include "remedis/pipeline.hpp"
#include "remedis/stats.hpp"

namespace remedis::config {

inline constexpr int kSchemaVersion = 1;

struct RunConfig {
  int schema_version = kSchemaVersion;
  std::string output_dir = "runs/default";
  std::size_t workers = 0;  // 0: hardware concurrency
  pipeline::ProtocolSpec protocol;
  std::vector<stats::CostSpec> costs;  // defaults to the reference task rows

  RunConfig();
  void validate() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
// Fully resolved configuration, every key present, stable key order.
std::string to_json(const RunConfig& config);
std::string config_hash(const RunConfig& config);

// A grid is either explicit lists or log-spaced specs per axis, e.g.
// {"learning_rates": {"log_spaced": {"n": 4, "lo": 1e-3, "hi": 1e-1}},
//  "weight_decays": [0.0]}.
std::vector<pipeline::GridPoint> parse_grid(const std::string& text);

}  // namespace remedis::config
