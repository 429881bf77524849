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

// Aggregates raw metric rows into efficiency curves, Welch tests, matching
// fractions, cost and subgroup tables, plus SVG charts. Output is a pure
// function of the inputs so reruns are byte-identical.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "remedis/pipeline.hpp"
#include "remedis/stats.hpp"

namespace remedis::report {

struct ReportInput {
  std::vector<pipeline::MetricRow> rows;
  std::vector<pipeline::PredictionRow> predictions;
  std::vector<stats::CostSpec> costs;
  std::string manifest_hash;
  std::string reference = "remedis";
  double level = 0.95;
};

struct CellKey {
  std::string strategy;
  std::string arch;
  std::string metric;
  std::string scenario;
  double fraction = 0.0;

  auto operator<=>(const CellKey&) const = default;
};

struct Cell {
  CellKey key;
  std::vector<double> values;  // present repeats in repeat order
  std::size_t missing = 0;     // rows with an empty value
  std::optional<stats::Interval> t_interval;
  std::optional<stats::Interval> percentile_interval;
};

struct WelchRow {
  std::string reference;
  std::string baseline;
  std::string arch;
  std::string metric;
  std::string scenario;
  double fraction = 0.0;
  std::optional<stats::WelchResult> result;  // empty when a side is missing
  double mean_reference = 0.0;
  double mean_baseline = 0.0;
};

struct MatchingRow {
  std::string strategy;
  std::string baseline;
  std::string arch;
  std::string metric;
  std::optional<double> target;  // baseline mean at the largest fraction
  stats::MatchingInterval fraction;
};

struct CostLine {
  stats::CostSpec spec;
  std::optional<double> fraction_needed;
  std::optional<stats::CostReport> report;
};

struct Report {
  std::vector<Cell> cells;
  std::vector<WelchRow> welch;
  std::vector<MatchingRow> matching;
  std::vector<CostLine> costs;
  std::vector<stats::CostCheck> reference_checks;
  std::vector<std::string> missing;  // human-readable descriptions
  std::map<std::string, std::string> files;  // file name -> content

  bool complete() const { return missing.empty(); }
};

Report build_report(const ReportInput& input);

// Reads metrics.csv (required), manifest.json and predictions.csv (optional)
// from a results directory. Throws kInvalidArgument when there are no rows.
ReportInput load_results(const std::filesystem::path& dir, std::string reference = "remedis");
void write_report(const Report& report, const std::filesystem::path& dir);

// Efficiency curve for one (strategy, arch, metric): the zero-shot point at
// fraction 0 followed by the OOD fine-tune fractions.
stats::EfficiencyCurve efficiency_curve(const Report& report, const std::string& strategy,
                                        const std::string& arch, const std::string& metric);

}  // namespace remedis::report
