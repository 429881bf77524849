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

#include "remedis/contrastive.hpp"

#include <cmath>

#include "remedis/error.hpp"

namespace remedis::contrastive {
namespace {

// Logit assigned to the excluded self-similarity entry; exp() of it is 0.
constexpr double kExcluded = -1e9;

void check_pairing(std::span<const std::size_t> pairing, std::size_t rows) {
  if (pairing.size() != rows) {
    fail(ErrorCode::kShapeMismatch, "nt_xent_loss: pairing has " +
                                        std::to_string(pairing.size()) + " entries for " +
                                        std::to_string(rows) + " rows");
  }
  for (std::size_t i = 0; i < rows; ++i) {
    if (pairing[i] >= rows || pairing[i] == i || pairing[pairing[i]] != i) {
      fail(ErrorCode::kInvalidArgument,
           "nt_xent_loss: pairing must be a fixed-point-free involution");
    }
  }
}

}  // namespace

void ContrastiveConfig::validate() const {
  require(temperature > 0.0, "contrastive: temperature must be > 0");
  require(batch_pairs >= 1, "contrastive: batch size must be >= 1");
}

std::vector<std::size_t> interleaved_pairing(std::size_t pairs) {
  std::vector<std::size_t> p(2 * pairs);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = i ^ 1U;
  return p;
}

LossTerms nt_xent_loss(ad::Var z, std::span<const std::size_t> pairing, double temperature) {
  require(temperature > 0.0, "nt_xent_loss: temperature must be > 0");
  const Shape& shape = z.shape();
  if (shape.size() != 2 || shape[0] < 2 || shape[0] % 2 != 0) {
    fail(ErrorCode::kShapeMismatch, "nt_xent_loss: expected [2N,P] embeddings, got " +
                                        shape_str(shape));
  }
  const std::size_t rows = shape[0];
  check_pairing(pairing, rows);
  ad::Var unit = ad::l2_normalize(z);  // throws on zero rows
  ad::Var sim = ad::scale(ad::matmul(unit, ad::transpose(unit)), 1.0 / temperature);
  std::vector<bool> diag(rows * rows, false);
  for (std::size_t i = 0; i < rows; ++i) diag[i * rows + i] = true;
  ad::Var logits = ad::masked_fill(sim, diag, kExcluded);
  Tensor targets({rows, rows});
  for (std::size_t i = 0; i < rows; ++i) targets[i * rows + pairing[i]] = 1.0;
  ad::Var per_anchor = ad::cross_entropy_rows(logits, targets);
  return LossTerms{ad::mean(per_anchor), per_anchor};
}

LossValue nt_xent_loss(const Tensor& z, std::span<const std::size_t> pairing,
                       double temperature) {
  ad::Tape tape;
  LossTerms terms = nt_xent_loss(tape.constant(z), pairing, temperature);
  const Tensor& pa = terms.per_anchor.value();
  return LossValue{terms.loss.value().item(), {pa.data().begin(), pa.data().end()}};
}

PairBatch build_pair_batch(std::span<const std::span<const Image>> records,
                           std::span<const std::uint64_t> record_ids,
                           const augment::AugmentPolicy& policy, std::uint64_t seed,
                           std::uint64_t epoch) {
  if (records.empty()) fail(ErrorCode::kInvalidArgument, "build_pair_batch: empty batch");
  require(records.size() == record_ids.size(), "build_pair_batch: one id per record required");
  std::vector<Image> views;
  views.reserve(2 * records.size());
  PairBatch batch;
  for (std::size_t k = 0; k < records.size(); ++k) {
    Rng rng(derive_seed({seed, record_ids[k], epoch}));
    augment::ViewPair pair = augment::make_view_pair(records[k], policy, rng);
    batch.view_indices.push_back(pair.view_index);
    views.push_back(std::move(pair.first));
    views.push_back(std::move(pair.second));
  }
  std::vector<const Image*> ptrs;
  ptrs.reserve(views.size());
  for (const Image& v : views) ptrs.push_back(&v);
  batch.views = models::stack_images(ptrs);
  batch.pairing = interleaved_pairing(records.size());
  return batch;
}

double pretrain_step(PretrainState& state, const PairBatch& batch, const ContrastiveConfig& cfg,
                     double lr) {
  cfg.validate();
  ad::Tape tape;
  models::Bound enc = models::bind(tape, state.encoder.params, true);
  models::Bound proj = models::bind(tape, state.projection, true);
  ad::Var emb = models::encode(state.encoder.config, enc, tape.constant(batch.views));
  ad::Var z = models::project(proj, emb);
  LossTerms terms = nt_xent_loss(z, batch.pairing, cfg.temperature);
  const double loss = terms.loss.value().item();
  ad::Gradients grads = tape.backward(terms.loss);
  std::map<std::string, Tensor> enc_grads, proj_grads;
  for (const auto& [name, var] : enc) enc_grads.emplace(name, grads[var]);
  for (const auto& [name, var] : proj) proj_grads.emplace(name, grads[var]);
  // One optimizer over both parameter sets; names are disjoint.
  std::map<std::string, Tensor> params;
  params.merge(state.encoder.params);
  params.merge(state.projection);
  std::map<std::string, Tensor> all_grads;
  all_grads.merge(enc_grads);
  all_grads.merge(proj_grads);
  state.optimizer.step(params, all_grads, lr);
  for (auto& [name, t] : params) {
    if (name.rfind("proj.", 0) == 0) {
      state.projection.emplace(name, std::move(t));
    } else {
      state.encoder.params.emplace(name, std::move(t));
    }
  }
  return loss;
}

}  // namespace remedis::contrastive
