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
#include <numeric>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "remedis/contrastive.hpp"
#include "remedis/error.hpp"

using namespace remedis;
using namespace remedis::contrastive;

namespace {

std::vector<std::vector<double>> rows_of(const Tensor& z) {
  const std::size_t n = z.dim(0), d = z.dim(1);
  std::vector<std::vector<double>> out(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i][j] = z[i * d + j];
  return out;
}

Tensor random_z(std::size_t rows, std::size_t dim, Rng& rng) {
  Tensor z({rows, dim});
  for (double& v : z.data()) v = rng.normal();
  return z;
}

Image pattern(int seed) {
  Rng rng(seed);
  Image img(8, 8, 1);
  for (double& p : img.pixels) p = rng.uniform();
  return img;
}

}  // namespace

TEST_SUITE("contrastive") {
  TEST_CASE("matches double-loop oracle") {
    Rng rng(2024);
    for (int batch = 0; batch < 100; ++batch) {
      const std::size_t n = 1 + rng.index(8);
      const double tau = std::array{0.1, 0.2, 1.0}[batch % 3];
      const Tensor z = random_z(2 * n, 5, rng);
      const auto pairing = interleaved_pairing(n);
      std::vector<double> terms;
      const double expected = oracle::nt_xent(rows_of(z), pairing, tau, &terms);
      const LossValue got = nt_xent_loss(z, pairing, tau);
      CHECK(std::abs(got.loss - expected) < 1e-9);
      for (std::size_t i = 0; i < terms.size(); ++i) CHECK(std::abs(got.per_anchor[i] - terms[i]) < 1e-9);
    }
  }

  TEST_CASE("analytic values") {
    const auto p1 = interleaved_pairing(1);
    CHECK(nt_xent_loss(Tensor({2, 3}, {1, 2, 3, -1, 0.5, 2}), p1, 0.1).loss == 0.0);

    const auto p2 = interleaved_pairing(2);
    Tensor same({4, 2}, {0.3, -0.7, 0.3, -0.7, 0.3, -0.7, 0.3, -0.7});
    CHECK(std::abs(nt_xent_loss(same, p2, 0.37).loss - std::log(3.0)) < 1e-9);

    Tensor ortho({4, 2}, {1, 0, 1, 0, 0, 1, 0, 1});
    const double expected = std::log(1.0 + 2.0 / std::exp(1.0));
    CHECK(std::abs(nt_xent_loss(ortho, p2, 1.0).loss - expected) < 1e-12);
    CHECK(std::abs(expected - 0.55144) < 1e-5);
  }

  TEST_CASE("errors") {
    const auto p2 = interleaved_pairing(2);
    Tensor z({4, 2}, {1, 0, 0, 0, 0, 1, 0, 1});
    CHECK_THROWS_AS(nt_xent_loss(z, p2, 0.1), Error);
    Tensor ok({4, 2}, {1, 0, 1, 1, 0, 1, 0, 1});
    CHECK_THROWS_AS(nt_xent_loss(ok, p2, 0.0), Error);
    const std::vector<std::size_t> fixed{0, 1, 2, 3};
    CHECK_THROWS_AS(nt_xent_loss(ok, fixed, 0.1), Error);
  }

  TEST_CASE("pair permutation leaves loss unchanged") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 2 + rng.index(6);
      Tensor z = random_z(2 * n, 4, rng);
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng.engine());
      Tensor permuted({2 * n, 4});
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t r = 0; r < 2; ++r)
          for (std::size_t d = 0; d < 4; ++d)
            permuted[(2 * k + r) * 4 + d] = z[(2 * order[k] + r) * 4 + d];
      const auto pairing = interleaved_pairing(n);
      CHECK(std::abs(nt_xent_loss(z, pairing, 0.2).loss - nt_xent_loss(permuted, pairing, 0.2).loss) <
            1e-12);
    }
  }

  TEST_CASE("closer negative never lowers the anchor term") {
    Rng rng(5);
    const auto pairing = interleaved_pairing(3);
    for (int trial = 0; trial < 50; ++trial) {
      Tensor z = random_z(6, 3, rng);
      const double before = nt_xent_loss(z, pairing, 0.5).per_anchor[0];
      // Move negative row 2 halfway toward anchor row 0.
      Tensor moved = z;
      for (std::size_t d = 0; d < 3; ++d) moved[2 * 3 + d] = 0.5 * (z[d] + z[2 * 3 + d]);
      auto rows = rows_of(z);
      auto moved_rows = rows_of(moved);
      auto cos = [](const std::vector<double>& a, const std::vector<double>& b) {
        return ad::cosine_similarity(a, b);
      };
      if (cos(moved_rows[0], moved_rows[2]) < cos(rows[0], rows[2])) continue;
      CHECK(nt_xent_loss(moved, pairing, 0.5).per_anchor[0] >= before - 1e-12);
    }
  }

  TEST_CASE("gradient matches finite differences") {
    Rng rng(8);
    const auto pairing = interleaved_pairing(4);
    ad::ScalarFn fn = [&](ad::Tape&, ad::Var z) { return nt_xent_loss(z, pairing, 0.1).loss; };
    for (int p = 0; p < 5; ++p) CHECK(ad::finite_difference_check(fn, random_z(8, 6, rng)) < 1e-4);
  }

  TEST_CASE("pair batches") {
    const auto p3 = interleaved_pairing(3);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(p3[i] != i);
      CHECK(p3[p3[i]] == i);
    }
    std::vector<std::vector<Image>> store{{pattern(1)}, {pattern(2)}, {pattern(3)}, {pattern(4)}};
    std::vector<std::span<const Image>> records(store.begin(), store.end());
    const std::vector<std::uint64_t> ids{10, 11, 12, 13};
    CHECK_THROWS_AS(build_pair_batch({}, {}, augment::AugmentPolicy::none(), 1, 0), Error);

    PairBatch plain = build_pair_batch(records, ids, augment::AugmentPolicy::none(), 1, 0);
    CHECK(plain.views.shape() == Shape{8, 1, 8, 8});
    for (std::size_t k = 0; k < 4; ++k)
      CHECK(std::equal(plain.views.data().begin() + 2 * k * 64, plain.views.data().begin() + (2 * k + 1) * 64,
                       plain.views.data().begin() + (2 * k + 1) * 64));

    augment::AugmentPolicy policy;
    PairBatch a = build_pair_batch(records, ids, policy, 3, 1);
    PairBatch b = build_pair_batch(records, ids, policy, 3, 1);
    CHECK(a.views == b.views);

    // Identical views give the minimal loss over random pairings.
    Rng rng(4);
    Tensor z = random_z(4, 6, rng);
    Tensor doubled({8, 6});
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t d = 0; d < 6; ++d) doubled[2 * k * 6 + d] = doubled[(2 * k + 1) * 6 + d] = z[k * 6 + d];
    const auto pairing = interleaved_pairing(4);
    const double best = nt_xent_loss(doubled, pairing, 0.1).loss;
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<std::size_t> order(8);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng.engine());
      std::vector<std::size_t> random_pairing(8);
      for (std::size_t k = 0; k < 4; ++k) {
        random_pairing[order[2 * k]] = order[2 * k + 1];
        random_pairing[order[2 * k + 1]] = order[2 * k];
      }
      CHECK(nt_xent_loss(doubled, random_pairing, 0.1).loss >= best - 1e-12);
    }
  }

  TEST_CASE("pretrain step") {
    std::vector<std::vector<Image>> store;
    std::vector<std::uint64_t> ids;
    for (int i = 0; i < 4; ++i) {
      Image img(8, 8, 1);
      Rng r(i);
      for (double& p : img.pixels) p = r.uniform();
      store.push_back({img});
      ids.push_back(i);
    }
    std::vector<std::span<const Image>> records(store.begin(), store.end());

    models::EncoderConfig cfg;
    cfg.image_size = 8;
    cfg.widths = {4, 8};
    cfg.groups = 2;
    cfg.embed_dim = 8;
    Rng rng(1);
    auto make_state = [&] {
      Rng r(1);
      PretrainState s{models::build_encoder(cfg, r), models::build_projection_head(8, 8, 4, r),
                      optim::Optimizer(optim::OptimizerConfig{})};
      return s;
    };
    augment::AugmentPolicy policy;
    policy.rotate = false;
    PairBatch batch = build_pair_batch(records, ids, policy, 9, 0);
    ContrastiveConfig cc;

    PretrainState frozen = make_state();
    const auto enc_before = frozen.encoder.params;
    const double loss0 = pretrain_step(frozen, batch, cc, 0.0);
    CHECK(frozen.encoder.params == enc_before);
    CHECK(std::isfinite(loss0));

    // Loss equals the standalone loss on the same forward.
    const Tensor z = models::project(frozen.projection, models::encode(frozen.encoder, batch.views));
    CHECK(std::abs(nt_xent_loss(z, batch.pairing, cc.temperature).loss - loss0) < 1e-12);

    PretrainState moving = make_state();
    pretrain_step(moving, batch, cc, 1.0);
    CHECK(moving.encoder.params != enc_before);
  }
}
