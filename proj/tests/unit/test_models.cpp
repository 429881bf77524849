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
#include "remedis/checkpoint.hpp"
#include "remedis/error.hpp"
#include "remedis/models.hpp"

using namespace remedis;
using namespace remedis::models;

namespace {

EncoderConfig tiny() {
  EncoderConfig cfg;
  cfg.image_size = 8;
  cfg.widths = {4, 8};
  cfg.groups = 2;
  cfg.embed_dim = 6;
  return cfg;
}

Tensor random_batch(std::size_t n, int size, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({n, 1, static_cast<std::size_t>(size), static_cast<std::size_t>(size)});
  for (double& v : t.data()) v = rng.uniform();
  return t;
}

}  // namespace

TEST_SUITE("models") {
  TEST_CASE("build is deterministic and matches closed-form count") {
    Rng a(5), b(5);
    const EncoderState ea = build_encoder(tiny(), a);
    const EncoderState eb = build_encoder(tiny(), b);
    CHECK(ea.params == eb.params);
    // stage 0: 4*1*9 + 2*4; stage 1: 8*4*9 + 2*8; fc: 8*6 + 6
    CHECK(count_parameters(ea.params) == 44 + 304 + 54);
    CHECK(parameter_count(tiny()) == 402);
    EncoderConfig bad = tiny();
    bad.groups = 3;
    CHECK_THROWS_AS(build_encoder(bad, a), Error);
  }

  TEST_CASE("encode row independence and shape") {
    Rng rng(1);
    const EncoderState enc = build_encoder(tiny(), rng);
    const Tensor one = random_batch(1, 8, 2);
    Tensor two({2, 1, 8, 8});
    for (std::size_t i = 0; i < 64; ++i) two[i] = two[64 + i] = one[i];
    const Tensor out = encode(enc, two);
    for (std::size_t d = 0; d < 6; ++d) CHECK(out[d] == out[6 + d]);

    const Tensor batch = random_batch(3, 8, 3);
    Tensor swapped = batch;
    for (std::size_t i = 0; i < 64; ++i) std::swap(swapped[i], swapped[128 + i]);
    const Tensor o1 = encode(enc, batch), o2 = encode(enc, swapped);
    for (std::size_t d = 0; d < 6; ++d) {
      CHECK(o1[d] == o2[12 + d]);
      CHECK(o1[6 + d] == o2[6 + d]);
    }
    CHECK_THROWS_AS(encode(enc, random_batch(1, 10, 4)), Error);

    Rng cfg_rng(42);
    for (int i = 0; i < 20; ++i) {
      EncoderConfig c;
      c.image_size = 8;
      c.groups = 1 + static_cast<int>(cfg_rng.index(2));
      c.widths.clear();
      const std::size_t stages = 1 + cfg_rng.index(3);
      for (std::size_t s = 0; s < stages; ++s) c.widths.push_back(2 * (1 + static_cast<int>(cfg_rng.index(3))));
      c.embed_dim = 1 + static_cast<int>(cfg_rng.index(9));
      Rng r(i);
      const Tensor e = encode(build_encoder(c, r), random_batch(2, 8, i));
      CHECK(e.shape() == Shape{2, static_cast<std::size_t>(c.embed_dim)});
      CHECK(e.all_finite());
    }
  }

  TEST_CASE("heads and composition") {
    Rng rng(7);
    Model model{build_encoder(tiny(), rng), {}, HeadConfig{6, 3, false, 4}};
    model.head = build_classification_head(model.head_config, HeadInit::kZeros, rng);
    CHECK(classify(model, Tensor({2, 1, 8, 8}, 0.0)) == Tensor({2, 3}, 0.0));

    model.head = build_classification_head(model.head_config, HeadInit::kRandom, rng);
    const Tensor x = random_batch(4, 8, 9);
    const Tensor logits = classify(model, x);
    CHECK(logits.shape() == Shape{4, 3});
    const Tensor f = encode(model.encoder, x);
    ad::Tape tape;
    const Bound head = models::bind(tape, model.head, false);
    CHECK(head_logits(head, tape.constant(f)).value() == logits);

    const Params proj = build_projection_head(6, 6, 3, rng);
    Tensor dup({2, 6});
    for (std::size_t d = 0; d < 6; ++d) dup[d] = dup[6 + d] = f[d];
    const Tensor z = project(proj, dup);
    CHECK(z.shape() == Shape{2, 3});
    for (std::size_t d = 0; d < 3; ++d) CHECK(z[d] == z[3 + d]);
  }

  TEST_CASE("attention pooling") {
    const Tensor single({1, 3}, {0.2, -1.0, 4.0});
    const std::vector<double> s1{0.7};
    CHECK(attention_pool(single, s1) == std::vector<double>{0.2, -1.0, 4.0});
    const Tensor two({2, 2}, {1.0, 2.0, 3.0, 6.0});
    const std::vector<double> eq{0.3, 0.3};
    const auto mean = attention_pool(two, eq);
    CHECK(mean[0] == doctest::Approx(2.0));
    CHECK(mean[1] == doctest::Approx(4.0));
    const std::vector<double> ln3{std::log(3.0), 0.0};
    const auto w = attention_pool(two, ln3);
    CHECK(w[0] == doctest::Approx(0.75 * 1 + 0.25 * 3).epsilon(1e-12));
    CHECK(w[1] == doctest::Approx(0.75 * 2 + 0.25 * 6).epsilon(1e-12));
    CHECK_THROWS_AS(attention_pool(Tensor({0, 2}), std::vector<double>{}), Error);
  }

  TEST_CASE("provenance transitions") {
    CHECK_NOTHROW(check_transition(Provenance::kRandom, Provenance::kSupervisedPretrained));
    CHECK_NOTHROW(check_transition(Provenance::kSupervisedPretrained, Provenance::kContrastivePretrained));
    CHECK_NOTHROW(check_transition(Provenance::kFineTuned, Provenance::kFineTuned));
    CHECK_THROWS_AS(check_transition(Provenance::kContrastivePretrained, Provenance::kSupervisedPretrained),
                    Error);
    CHECK(parse_provenance(provenance_name(Provenance::kContrastivePretrained)) ==
          Provenance::kContrastivePretrained);
  }

  TEST_CASE("checkpoint round trip") {
    Rng rng(11);
    Model model{build_encoder(tiny(), rng), {}, HeadConfig{6, 3, true, 4}};
    model.encoder.provenance = Provenance::kFineTuned;
    model.head = build_classification_head(model.head_config, HeadInit::kRandom, rng);
    const Checkpoint ckpt = model_checkpoint(model, 42);
    const Model back = model_from_checkpoint(deserialize_checkpoint(serialize_checkpoint(ckpt)));
    CHECK(back.encoder.params == model.encoder.params);
    CHECK(back.head == model.head);
    CHECK(back.encoder.provenance == Provenance::kFineTuned);
    const Tensor x = random_batch(3, 8, 12);
    CHECK(classify(back, x) == classify(model, x));
    CHECK(ckpt.meta.at("step") == "42");
    std::string bytes = serialize_checkpoint(ckpt);
    bytes.pop_back();
    CHECK_THROWS_AS(deserialize_checkpoint(bytes), Error);
  }

  TEST_CASE("gradient through encoder and NT-Xent-free head") {
    Rng rng(3);
    const EncoderConfig cfg = tiny();
    const EncoderState enc = build_encoder(cfg, rng);
    const Tensor x = random_batch(2, 8, 4);
    ad::ScalarFn fn = [&](ad::Tape& tape, ad::Var w) {
      Bound b = models::bind(tape, enc.params, false);
      b["enc.fc.w"] = w;
      return ad::mean(ad::tanh(encode(cfg, b, tape.constant(x))));
    };
    CHECK(ad::finite_difference_check(fn, enc.params.at("enc.fc.w")) < 1e-3);
  }
}
