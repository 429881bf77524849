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
#include <vector>

#include "doctest.h"
#include "remedis/autodiff.hpp"
#include "remedis/error.hpp"
#include "remedis/rng.hpp"

using namespace remedis;
using namespace remedis::ad;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Pushes `x` through a fixed random projection so every op sees a
// non-symmetric upstream gradient.
Var weighted_sum(Tape& tape, Var x, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w = random_tensor(x.shape(), rng);
  return sum(mul(x, tape.constant(w)));
}

void check_points(const char* name, const Shape& shape, const ScalarFn& fn,
                  double tol = 1e-3, double lo = -1.0, double hi = 1.0) {
  Rng rng(derive_seed({7, shape_size(shape)}));
  for (int p = 0; p < 10; ++p) {
    Tensor point = random_tensor(shape, rng, lo, hi);
    const double err = finite_difference_check(fn, point);
    INFO(name << " point " << p << " err " << err);
    CHECK(err < tol);
  }
}

}  // namespace

TEST_SUITE("autodiff") {
  TEST_CASE("trivial forward examples") {
    Tape tape;
    Var x = tape.constant(Tensor({3}, {-1.0, 0.0, 2.0}));
    CHECK(relu(x).value() == Tensor({3}, {0.0, 0.0, 2.0}));

    Var a = tape.constant(Tensor({2, 3}, 1.0));
    Var b = tape.constant(Tensor({3, 2}, 1.0));
    CHECK(matmul(a, b).value() == Tensor({2, 2}, 3.0));

    Var c = tape.constant(Tensor({1, 2, 2, 2}, 0.7));
    Var gamma = tape.constant(Tensor({2}, 1.0));
    Var beta = tape.constant(Tensor({2}, 0.0));
    CHECK(group_norm(c, gamma, beta, 1).value() == Tensor({1, 2, 2, 2}, 0.0));
  }

  TEST_CASE("trivial backward examples") {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(3.0), true);
    Gradients g = tape.backward(mul(x, x));
    CHECK(g[x].item() == doctest::Approx(6.0));

    Tape t2;
    Var y = t2.leaf(Tensor({2}, {-1.0, 2.0}), true);
    Var unused = t2.leaf(Tensor({3}, 5.0), true);
    Gradients g2 = t2.backward(mean(relu(y)));
    CHECK(g2[y][0] == 0.0);
    CHECK(g2[y][1] == doctest::Approx(0.5));
    CHECK(g2[unused] == Tensor({3}, 0.0));
  }

  TEST_CASE("errors") {
    Tape tape;
    Var a = tape.constant(Tensor({2, 3}, 1.0));
    Var b = tape.constant(Tensor({2, 3}, 1.0));
    CHECK_THROWS_AS(matmul(a, b), Error);
    try {
      matmul(a, b);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kShapeMismatch);
      CHECK(std::string(e.what()).find("matmul") != std::string::npos);
    }
    CHECK_THROWS_AS(tape.backward(a), Error);
    Var big = tape.constant(Tensor({1}, 800.0));
    try {
      exp(big);
      FAIL("expected overflow");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kNumericOverflow);
    }
    Var img = tape.constant(Tensor({1, 1, 4, 4}, 1.0));
    Var w = tape.constant(Tensor({1, 1, 3, 3}, 1.0));
    CHECK_THROWS_AS(conv2d(img, w, 0, 1), Error);
  }

  TEST_CASE("cosine similarity") {
    const std::vector<double> e1{1, 0}, e2{0, 1}, u{2, 2}, v{1, 1}, p{3, 4}, q{4, 3}, z{0, 0};
    CHECK(cosine_similarity(e1, e2) == 0.0);
    CHECK(cosine_similarity(u, v) == doctest::Approx(1.0));
    CHECK(cosine_similarity(p, q) == doctest::Approx(0.96).epsilon(1e-12));
    CHECK_THROWS_AS(cosine_similarity(z, e1), Error);
  }

  TEST_CASE("finite difference harness") {
    ScalarFn sq = [](Tape&, Var x) { return sum(mul(x, x)); };
    Rng rng(1);
    CHECK(finite_difference_check(sq, random_tensor({4, 3}, rng)) < 1e-8);

    ScalarFn xent = [](Tape&, Var x) {
      const std::vector<int> labels{0, 2, 1, 1};
      return softmax_cross_entropy(x, labels);
    };
    CHECK(finite_difference_check(xent, random_tensor({4, 3}, rng, -3, 3)) < 1e-4);

    ScalarFn conv = [](Tape& tape, Var x) {
      Rng wr(3);
      Var w = tape.constant(random_tensor({2, 2, 3, 3}, wr));
      return mean(relu(conv2d(x, w, 1, 1)));
    };
    CHECK(finite_difference_check(conv, random_tensor({2, 2, 5, 5}, rng)) < 1e-3);
  }

  TEST_CASE("every op passes gradient check at 10 points") {
    check_points("add", {3, 4}, [](Tape& t, Var x) {
      Rng r(2);
      return weighted_sum(t, add(x, t.constant(random_tensor({3, 4}, r))), 11);
    });
    check_points("add row bias", {4}, [](Tape& t, Var b) {
      Rng r(2);
      return weighted_sum(t, add(t.constant(random_tensor({3, 4}, r)), b), 12);
    });
    check_points("sub", {3, 4}, [](Tape& t, Var x) { return weighted_sum(t, sub(x, mul(x, x)), 13); });
    check_points("mul", {3, 4}, [](Tape& t, Var x) { return weighted_sum(t, mul(x, x), 14); });
    check_points("scale", {5}, [](Tape& t, Var x) { return weighted_sum(t, scale(x, -2.5), 15); });
    check_points("relu", {6}, [](Tape& t, Var x) { return weighted_sum(t, relu(x), 16); });
    check_points("tanh", {6}, [](Tape& t, Var x) { return weighted_sum(t, ad::tanh(x), 17); });
    check_points("exp", {6}, [](Tape& t, Var x) { return weighted_sum(t, ad::exp(x), 18); });
    check_points("log", {6}, [](Tape& t, Var x) { return weighted_sum(t, ad::log(x), 19); }, 1e-3,
                 0.5, 2.0);
    check_points("reshape", {2, 6}, [](Tape& t, Var x) {
      return weighted_sum(t, reshape(x, {3, 4}), 20);
    });
    check_points("transpose", {2, 5}, [](Tape& t, Var x) {
      return weighted_sum(t, transpose(x), 21);
    });
    check_points("matmul lhs", {3, 4}, [](Tape& t, Var x) {
      Rng r(4);
      return weighted_sum(t, matmul(x, t.constant(random_tensor({4, 2}, r))), 22);
    });
    check_points("matmul rhs", {4, 2}, [](Tape& t, Var x) {
      Rng r(4);
      return weighted_sum(t, matmul(t.constant(random_tensor({3, 4}, r)), x), 23);
    });
    check_points("conv2d input stride 2", {2, 2, 6, 5}, [](Tape& t, Var x) {
      Rng r(5);
      return weighted_sum(t, conv2d(x, t.constant(random_tensor({3, 2, 3, 3}, r)), 2, 1), 24);
    });
    check_points("conv2d weight", {3, 2, 3, 3}, [](Tape& t, Var w) {
      Rng r(6);
      return weighted_sum(t, conv2d(t.constant(random_tensor({2, 2, 5, 5}, r)), w, 1, 1), 25);
    });
    check_points("global_avg_pool", {2, 3, 3, 3}, [](Tape& t, Var x) {
      return weighted_sum(t, global_avg_pool(x), 26);
    });
    check_points("group_norm input", {2, 4, 3, 3}, [](Tape& t, Var x) {
      Rng r(8);
      Var g = t.constant(random_tensor({4}, r, 0.5, 1.5));
      Var b = t.constant(random_tensor({4}, r));
      return weighted_sum(t, group_norm(x, g, b, 2), 27);
    });
    check_points("group_norm affine", {4}, [](Tape& t, Var g) {
      Rng r(9);
      Var x = t.constant(random_tensor({2, 4, 3, 3}, r));
      return weighted_sum(t, group_norm(x, g, g, 2), 28);
    });
    check_points("weight_standardize", {3, 2, 3, 3}, [](Tape& t, Var w) {
      return weighted_sum(t, weight_standardize(w), 29);
    });
    check_points("sum", {7}, [](Tape&, Var x) { return sum(mul(x, x)); });
    check_points("mean", {7}, [](Tape& t, Var x) { return mean(ad::exp(x)); (void)t; });
    check_points("l2_norm", {3, 4}, [](Tape& t, Var x) { return weighted_sum(t, l2_norm(x), 30); });
    check_points("l2_normalize", {3, 4}, [](Tape& t, Var x) {
      return weighted_sum(t, l2_normalize(x), 31);
    });
    check_points("softmax_rows", {3, 4}, [](Tape& t, Var x) {
      return weighted_sum(t, softmax_rows(x), 32);
    });
    check_points("cross_entropy_rows", {3, 4}, [](Tape& t, Var x) {
      Tensor targets({3, 4}, {0.1, 0.2, 0.3, 0.4, 1, 0, 0, 0, 0.25, 0.25, 0.25, 0.25});
      return weighted_sum(t, cross_entropy_rows(x, targets), 33);
    });
    check_points("softmax_cross_entropy", {3, 4}, [](Tape&, Var x) {
      const std::vector<int> labels{3, 0, 1};
      return softmax_cross_entropy(x, labels);
    });
    check_points("gather", {4, 3}, [](Tape& t, Var x) {
      const std::vector<std::size_t> rows{2, 0, 2, 3};
      return weighted_sum(t, gather(x, rows), 34);
    });
    check_points("concat", {2, 3}, [](Tape& t, Var x) {
      const std::vector<Var> parts{x, mul(x, x), x};
      return weighted_sum(t, concat(parts), 35);
    });
    check_points("masked_fill", {2, 3}, [](Tape& t, Var x) {
      const std::vector<bool> mask{true, false, false, false, true, false};
      return weighted_sum(t, masked_fill(x, mask, -3.0), 36);
    });
  }

  TEST_CASE("group norm and weight standardization statistics") {
    Rng rng(99);
    Tape tape;
    Var x = tape.constant(random_tensor({2, 6, 4, 4}, rng, -3.0, 5.0));
    Var g = tape.constant(Tensor({6}, 1.0));
    Var b = tape.constant(Tensor({6}, 0.0));
    const Tensor& y = group_norm(x, g, b, 3).value();
    const std::size_t slice = 2 * 16;
    for (std::size_t s = 0; s < 2 * 3; ++s) {
      double mu = 0.0, var = 0.0;
      for (std::size_t i = 0; i < slice; ++i) mu += y[s * slice + i];
      mu /= slice;
      for (std::size_t i = 0; i < slice; ++i) var += (y[s * slice + i] - mu) * (y[s * slice + i] - mu);
      var /= slice;
      CHECK(std::abs(mu) < 1e-6);
      CHECK(std::abs(var - 1.0) < 1e-4);
    }
    Var w = tape.constant(random_tensor({4, 3, 3, 3}, rng, -2.0, 2.0));
    const Tensor& ws = weight_standardize(w).value();
    for (std::size_t o = 0; o < 4; ++o) {
      double mu = 0.0, var = 0.0;
      for (std::size_t i = 0; i < 27; ++i) mu += ws[o * 27 + i];
      mu /= 27;
      for (std::size_t i = 0; i < 27; ++i) var += (ws[o * 27 + i] - mu) * (ws[o * 27 + i] - mu);
      var /= 27;
      CHECK(std::abs(mu) < 1e-6);
      CHECK(std::abs(var - 1.0) < 1e-4);
    }
  }

  TEST_CASE("backward is deterministic") {
    auto run = [] {
      Rng rng(5);
      Tape tape;
      Var x = tape.leaf(random_tensor({2, 2, 5, 5}, rng), true);
      Var w = tape.leaf(random_tensor({3, 2, 3, 3}, rng), true);
      Var y = mean(relu(conv2d(x, weight_standardize(w), 1, 1)));
      Gradients g = tape.backward(y);
      return std::pair{g[x], g[w]};
    };
    CHECK(run() == run());
  }
}
