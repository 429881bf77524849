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

#include <string>

#include "doctest.h"
#include "remedis/config.hpp"
#include "remedis/error.hpp"

using namespace remedis;
using namespace remedis::config;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_run_config(text);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidArgument);
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("minimal config keeps defaults") {
    const RunConfig c = parse_run_config(R"({"schema_version": 1})");
    const RunConfig d;
    CHECK(to_json(c) == to_json(d));
    CHECK(c.costs.size() == 6);
    CHECK(c.protocol.repeats == 10);
  }

  TEST_CASE("resolved json round trips") {
    const RunConfig c = parse_run_config(R"({
      "schema_version": 1, "seed": 42, "repeats": 3, "presets": ["tiny"],
      "strategies": ["none", "remedis"],
      "data": {"base": {"image_size": 16, "in_sizes": {"train": 50}}, "shift": {"technology": {"blur_sigma": 1.5}}},
      "contrastive": {"optimizer": {"kind": "adam"}, "learning_rate": 0.003, "augment": {"crop_area": [0.2, 1.0]}},
      "finetune": {"linear_probe": true},
      "id_grid": {"learning_rates": {"log_spaced": {"n": 3, "lo": 0.001, "hi": 0.1}}, "weight_decays": [0, 0.0001]}
    })");
    CHECK(c.protocol.seed == 42);
    CHECK(c.protocol.base.image_size == 16);
    CHECK(c.protocol.base.in_sizes.train == 50);
    CHECK(c.protocol.base.in_sizes.test == data::BaseSpec{}.in_sizes.test);
    CHECK(c.protocol.shift.technology.blur_sigma == 1.5);
    CHECK(c.protocol.contrastive.optimizer.kind == optim::OptimizerKind::kAdam);
    CHECK(c.protocol.contrastive.policy.crop_area.lo == 0.2);
    CHECK(c.protocol.finetune.linear_probe);
    CHECK(c.protocol.strategies.size() == 2);
    REQUIRE(c.protocol.id_grid.size() == 6);
    CHECK(c.protocol.id_grid[2].learning_rate == doctest::Approx(0.01));
    CHECK(c.protocol.id_grid[3].weight_decay == 1e-4);
    const RunConfig again = parse_run_config(to_json(c));
    CHECK(to_json(again) == to_json(c));
    CHECK(config_hash(again) == config_hash(c));
  }

  TEST_CASE("unknown keys are rejected at every level") {
    CHECK(error_of(R"({"schema_version": 1, "sead": 1})").find("unknown key 'sead'") != std::string::npos);
    CHECK(error_of(R"({"schema_version": 1, "data": {"base": {"img": 3}}})").find("data.base") != std::string::npos);
    CHECK(error_of(R"({"schema_version": 1, "data": {"shift": {"technology": {"blurr": 1}}}})")
              .find("data.shift.technology") != std::string::npos);
    CHECK(error_of(R"({"schema_version": 1, "contrastive": {"augment": {"hue": 1}}})")
              .find("contrastive.augment") != std::string::npos);
    CHECK(error_of(R"({"schema_version": 1, "contrastive": {"optimizer": {"lr": 1}}})")
              .find("contrastive.optimizer") != std::string::npos);
    CHECK(error_of(R"({"schema_version": 1, "costs": [{"task": "T1", "wage": 3}]})").find("costs") != std::string::npos);
    CHECK(error_of(R"({"schema_version": 1, "id_grid": {"points": [{"lr": 1}]}})").find("id_grid") != std::string::npos);
  }

  TEST_CASE("invalid values are rejected") {
    CHECK(error_of(R"({"seed": 1})").find("schema_version") != std::string::npos);
    CHECK(error_of(R"({"schema_version": 2})").find("unsupported") != std::string::npos);
    CHECK_FALSE(error_of(R"({"schema_version": 1, "repeats": 1})").empty());
    CHECK_FALSE(error_of(R"({"schema_version": 1, "fractions": [0.5, 1.0]})").empty());
    CHECK_FALSE(error_of(R"({"schema_version": 1, "strategies": ["magic"]})").empty());
    CHECK_FALSE(error_of(R"({"schema_version": 1, "repeats": "ten"})").empty());
    CHECK_FALSE(error_of(R"({"schema_version": 1, "finetune": {"schedule": "cosine"}})").empty());
    CHECK_FALSE(error_of(R"({"schema_version": 1, "id_grid": {"learning_rates": []}})").empty());
    CHECK_FALSE(error_of(R"({"schema_version": 1, "id_grid": {"learning_rates": [-1]}})").empty());
    CHECK_FALSE(error_of("{not json").empty());
    CHECK_FALSE(error_of("[]").empty());
  }

  TEST_CASE("grid specs") {
    const auto g = parse_grid(R"({"learning_rates": {"log_spaced": {"n": 7, "lo": 1e-6, "hi": 1e-3}}})");
    REQUIRE(g.size() == 7);
    for (std::size_t i = 1; i < g.size(); ++i) {
      CHECK(g[i].learning_rate / g[i - 1].learning_rate == doctest::Approx(std::pow(10.0, 0.5)).epsilon(1e-12));
    }
    const auto p = parse_grid(R"({"points": [{"learning_rate": 0.1, "weight_decay": 0.01}]})");
    REQUIRE(p.size() == 1);
    CHECK(p[0].weight_decay == 0.01);
    CHECK_THROWS_AS(parse_grid(R"({"points": [], "learning_rates": [1]})"), Error);
  }
}
