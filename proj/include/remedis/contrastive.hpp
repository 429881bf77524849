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

#include <span>
#include <vector>

#include "remedis/augment.hpp"
#include "remedis/autodiff.hpp"
#include "remedis/image.hpp"
#include "remedis/models.hpp"
#include "remedis/optim.hpp"

namespace remedis::contrastive {

struct ContrastiveConfig {
  double temperature = 0.1;
  std::size_t batch_pairs = 32;  // N pairs -> 2N embeddings per step

  void validate() const;
};

// Interleaved layout: rows 2k and 2k+1 are the two views of example k.
std::vector<std::size_t> interleaved_pairing(std::size_t pairs);

struct LossTerms {
  ad::Var loss;        // mean over the 2N anchors
  ad::Var per_anchor;  // [2N]
};

// NT-Xent over cosine similarities. For anchor i with positive j = pairing[i]
//   l_i = -log( exp(s_ij / t) / sum_{k != i} exp(s_ik / t) )
LossTerms nt_xent_loss(ad::Var z, std::span<const std::size_t> pairing, double temperature);

struct LossValue {
  double loss = 0.0;
  std::vector<double> per_anchor;
};
LossValue nt_xent_loss(const Tensor& z, std::span<const std::size_t> pairing, double temperature);

struct PairBatch {
  Tensor views;  // [2N,C,H,W]
  std::vector<std::size_t> pairing;
  std::vector<std::size_t> view_indices;  // which record image was used
};

// Each record's stream is seeded from (seed, record id, epoch).
PairBatch build_pair_batch(std::span<const std::span<const Image>> records,
                           std::span<const std::uint64_t> record_ids,
                           const augment::AugmentPolicy& policy, std::uint64_t seed,
                           std::uint64_t epoch);

struct PretrainState {
  models::EncoderState encoder;
  models::Params projection;
  optim::Optimizer optimizer;
};

// One forward/backward/update; returns the loss of the forward pass.
double pretrain_step(PretrainState& state, const PairBatch& batch, const ContrastiveConfig& cfg,
                     double lr);

}  // namespace remedis::contrastive
