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
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "remedis/error.hpp"
#include "remedis/report.hpp"

using namespace remedis;
using namespace remedis::report;
using pipeline::MetricRow;

namespace {

void add_cell(std::vector<MetricRow>& rows, const std::string& strategy, const std::string& scenario, double fraction,
              std::vector<double> values) {
  for (std::size_t r = 0; r < values.size(); ++r) {
    rows.push_back({strategy, "small", scenario, fraction, r, "accuracy", values[r], 100 + r, std::nullopt});
  }
}

// Reference curve over fractions 0/10/20/50/100%
// and a baseline whose full-data mean is 0.844.
std::vector<MetricRow> curve_rows() {
  std::vector<MetricRow> rows;
  const double fractions[] = {0.1, 0.2, 0.5, 1.0};
  const double ref[] = {0.824, 0.836, 0.853, 0.864};
  add_cell(rows, "remedis", "zero_shot", 0.0, {0.762, 0.764});
  add_cell(rows, "supervised", "zero_shot", 0.0, {0.70, 0.71});
  for (int i = 0; i < 4; ++i) {
    add_cell(rows, "remedis", "ood_finetune", fractions[i], {ref[i] - 0.002, ref[i] + 0.002});
    add_cell(rows, "supervised", "ood_finetune", fractions[i], {0.80 + 0.01 * i, 0.81 + 0.01 * i});
  }
  // Overwrite the baseline's full-data cell with mean 0.844.
  for (auto& r : rows)
    if (r.strategy == "supervised" && r.fraction == 1.0) r.value = r.repeat == 0 ? 0.843 : 0.845;
  add_cell(rows, "remedis", "in_distribution", 1.0, {0.9, 0.91});
  add_cell(rows, "supervised", "in_distribution", 1.0, {0.9, 0.92});
  return rows;
}

ReportInput input_of(std::vector<MetricRow> rows) {
  ReportInput in;
  in.rows = std::move(rows);
  in.manifest_hash = "0123456789abcdef0123456789abcdef01234567";
  in.costs = {stats::reference_cost_rows()[0].spec};
  return in;
}

}  // namespace

TEST_SUITE("report") {
  TEST_CASE("empty input is rejected") {
    CHECK_THROWS_AS(build_report(ReportInput{}), Error);
    const auto dir = std::filesystem::temp_directory_path() / "remedis_report_empty";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    try {
      load_results(dir);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kInvalidArgument);
    }
    std::ofstream(dir / "metrics.csv") << "strategy,arch,scenario,fraction,repeat,metric_name,value,seed,wall_seconds\n";
    CHECK_THROWS_AS(load_results(dir), Error);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("matching-fraction fixture") {
    const Report r = build_report(input_of(curve_rows()));
    CHECK(r.complete());
    const auto it = std::find_if(r.matching.begin(), r.matching.end(),
                                 [](const MatchingRow& m) { return m.baseline == "supervised"; });
    REQUIRE(it != r.matching.end());
    REQUIRE(it->target.has_value());
    CHECK(*it->target == doctest::Approx(0.844).epsilon(1e-12));
    REQUIRE(it->fraction.value.has_value());
    CHECK(std::abs(*it->fraction.value - 0.341) < 0.001);
    CHECK(r.files.at("efficiency_small_accuracy.svg").find("34.1%") != std::string::npos);
    CHECK(r.files.at("summary.txt").find("fraction=34.1%") != std::string::npos);
    // Cost lines use the matched fraction.
    REQUIRE(r.costs.size() == 1);
    REQUIRE(r.costs[0].fraction_needed.has_value());
    CHECK(r.costs[0].report->samples_saved == std::round(17322 * (1 - *it->fraction.value)));
  }

  TEST_CASE("identical strategies give p = 1 everywhere") {
    auto rows = curve_rows();
    std::vector<MetricRow> twin;
    for (const auto& row : rows) {
      if (row.strategy != "remedis") continue;
      twin.push_back(row);
      twin.back().strategy = "supervised";
    }
    std::erase_if(rows, [](const MetricRow& r) { return r.strategy == "supervised"; });
    rows.insert(rows.end(), twin.begin(), twin.end());
    const Report r = build_report(input_of(rows));
    REQUIRE_FALSE(r.welch.empty());
    for (const auto& w : r.welch) {
      REQUIRE(w.result.has_value());
      CHECK(w.result->p == 1.0);
    }
  }

  TEST_CASE("reports are deterministic and order independent") {
    const auto rows = curve_rows();
    const Report a = build_report(input_of(rows));
    auto shuffled = rows;
    std::reverse(shuffled.begin(), shuffled.end());
    std::rotate(shuffled.begin(), shuffled.begin() + 5, shuffled.end());
    const Report b = build_report(input_of(shuffled));
    CHECK(a.files == b.files);
    for (const auto& [name, content] : a.files) {
      CAPTURE(name);
      CHECK(content.find("0123456789abcdef0123456789abcdef01234567") != std::string::npos);
    }
  }

  TEST_CASE("incomplete grids are flagged") {
    auto rows = curve_rows();
    // One failed repeat and one cell with a single usable value.
    for (auto& r : rows)
      if (r.strategy == "remedis" && r.fraction == 0.5 && r.repeat == 1) r.value.reset();
    const Report r = build_report(input_of(rows));
    CHECK_FALSE(r.complete());
    REQUIRE(r.missing.size() == 1);
    CHECK(r.missing[0].find("remedis/small/accuracy/ood_finetune@0.5") != std::string::npos);
    CHECK(r.files.at("cells.csv").find("remedis,small,accuracy,ood_finetune,0.5,1,1,,,,,") != std::string::npos);

    auto dropped = curve_rows();
    std::erase_if(dropped, [](const MetricRow& m) { return m.strategy == "supervised" && m.scenario == "zero_shot"; });
    CHECK_FALSE(build_report(input_of(dropped)).complete());
  }

  TEST_CASE("subgroup tables and reference cost checks") {
    ReportInput in = input_of(curve_rows());
    for (std::uint64_t id = 0; id < 80; ++id) {
      in.predictions.push_back({"remedis", "small", "zero_shot", 0.0, 0, id, static_cast<int>(id % 2), 1,
                                id % 4 == 0 ? 0 : 1});
    }
    const Report r = build_report(in);
    const std::string& table = r.files.at("subgroups.csv");
    CHECK(table.find("remedis,small,zero_shot,0,subgroup,g0,40,0.500000") != std::string::npos);
    CHECK(table.find("remedis,small,zero_shot,0,subgroup,g1,40,1.000000") != std::string::npos);
    std::size_t disagreements = 0;
    for (const auto& c : r.reference_checks) disagreements += !c.agrees;
    CHECK(disagreements == 2);
    CHECK(r.files.at("summary.txt").find("disagreement T3") != std::string::npos);
  }

  TEST_CASE("results directory round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "remedis_report_dir";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "metrics.csv") << pipeline::metrics_csv(curve_rows());
    std::ofstream(dir / "manifest.json") << "{\"seed\": 1}\n";
    const ReportInput in = load_results(dir);
    CHECK(in.manifest_hash.size() == 40);
    CHECK(in.rows.size() == curve_rows().size());
    const Report r = build_report(in);
    write_report(r, dir / "report");
    const Report again = build_report(load_results(dir));
    CHECK(again.files == r.files);
    CHECK(std::filesystem::exists(dir / "report" / "summary.txt"));
    std::filesystem::remove_all(dir);
  }
}
