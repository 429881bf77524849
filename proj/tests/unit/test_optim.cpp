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

#include <cmath>

#include "doctest.h"
#include "remedis/error.hpp"
#include "remedis/optim.hpp"

using namespace remedis;
using namespace remedis::optim;

TEST_SUITE("optim") {
  TEST_CASE("lars") {
    OptimizerConfig cfg;
    cfg.weight_decay = 0.0;
    cfg.momentum = 0.0;
    Tensor w({2}, {3.0, 4.0}), v({2}, 0.0);
    lars_update(w, Tensor({2}, {6.0, 8.0}), v, cfg, 1.0, true);
    CHECK(w[0] == doctest::Approx(2.997).epsilon(1e-12));
    CHECK(w[1] == doctest::Approx(3.996).epsilon(1e-12));

    Tensor z({2}, {3.0, 4.0}), vz({2}, 0.0);
    lars_update(z, Tensor({2}, 0.0), vz, cfg, 1.0, true);
    CHECK(z == Tensor({2}, {3.0, 4.0}));

    for (double c : {0.01, 1.0, 7.5, 1e4}) {
      Tensor a({3}, {1.0, -2.0, 0.5}), va({3}, 0.0);
      Tensor b = a, vb = va;
      const Tensor g({3}, {0.3, 0.1, -0.7});
      Tensor gc = g;
      for (double& x : gc.data()) x *= c;
      lars_update(a, g, va, cfg, 0.5, true);
      lars_update(b, gc, vb, cfg, 0.5, true);
      for (std::size_t i = 0; i < 3; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
    }
    CHECK(is_norm_or_bias("enc.s0.b0.gn.gamma"));
    CHECK(is_norm_or_bias("head.b"));
    CHECK_FALSE(is_norm_or_bias("enc.fc.w"));
    Tensor bad({3}, 0.0);
    CHECK_THROWS_AS(lars_update(w, bad, v, cfg, 1.0, true), Error);
  }

  TEST_CASE("nesterov and adam") {
    OptimizerConfig cfg;
    cfg.weight_decay = 0.0;
    cfg.momentum = 0.0;
    Tensor w({2}, {1.0, 2.0}), v({2}, 0.0);
    sgd_nesterov_update(w, Tensor({2}, {0.5, -1.0}), v, cfg, 0.1);
    CHECK(w[0] == doctest::Approx(0.95));
    CHECK(w[1] == doctest::Approx(2.1));

    cfg.momentum = 0.9;
    Tensor w2({1}, 0.0), v2({1}, 0.0);
    sgd_nesterov_update(w2, Tensor({1}, 2.0), v2, cfg, 0.1);
    sgd_nesterov_update(w2, Tensor({1}, 2.0), v2, cfg, 0.1);
    CHECK(v2[0] == doctest::Approx(2.0 * 1.9).epsilon(1e-12));

    OptimizerConfig acfg;
    acfg.kind = OptimizerKind::kAdam;
    acfg.weight_decay = 0.0;
    Tensor p({1}, 0.0), m({1}, 0.0), s({1}, 0.0);
    adam_update(p, Tensor({1}, 1.0), m, s, 1, acfg, 0.01);
    CHECK(std::abs(p[0] + 0.01) < 1e-6 * 0.01 + 1e-9);
  }

  TEST_CASE("optimizer object") {
    std::map<std::string, Tensor> params{{"w", Tensor({2}, 1.0)}};
    std::map<std::string, Tensor> grads{{"w", Tensor({2}, 0.5)}};
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::kSgdNesterov;
    Optimizer opt(cfg);
    opt.step(params, grads, 0.0);
    CHECK(params.at("w") == Tensor({2}, 1.0));
    CHECK(opt.steps_taken() == 1);
    CHECK(opt.slots().at("w").shape() == Shape{2});
  }

  TEST_CASE("schedules") {
    Schedule lin{ScheduleKind::kLinearDecay, 0.4, 0.1, 10, 100};
    CHECK(lin.value(0) == 0.4);
    CHECK(lin.value(100) == 0.0);
    CHECK_THROWS_AS(lin.value(101), Error);
    Schedule exp{ScheduleKind::kExponentialStaircase, 0.3, 0.1, 10000, 30000};
    CHECK(exp.value(20000) == doctest::Approx(0.003).epsilon(1e-12));
    Schedule c{ScheduleKind::kConstant, 0.2, 0.1, 10, 50};
    CHECK(c.value(50) == 0.2);
    for (std::size_t t = 1; t <= 100; ++t) CHECK(lin.value(t) <= lin.value(t - 1));
    for (std::size_t t = 1000; t <= 30000; t += 1000) CHECK(exp.value(t) <= exp.value(t - 1000));

    const auto lrs = log_spaced(7, 1e-6, 1e-3);
    REQUIRE(lrs.size() == 7);
    CHECK(lrs.front() == doctest::Approx(1e-6));
    CHECK(lrs.back() == doctest::Approx(1e-3));
    for (std::size_t i = 1; i < 7; ++i)
      CHECK(lrs[i] / lrs[i - 1] == doctest::Approx(std::pow(10.0, 0.5)).epsilon(1e-12));
    CHECK(parse_schedule("linear") == ScheduleKind::kLinearDecay);
    CHECK(parse_optimizer("adam") == OptimizerKind::kAdam);
    CHECK_THROWS_AS(parse_optimizer("lamb"), Error);
  }
}
