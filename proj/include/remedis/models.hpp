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

// Desk-scale encoder f, projection head g_proj, classification head g and
// the attention pooling front end used for multi-image cases.

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "remedis/autodiff.hpp"
#include "remedis/image.hpp"
#include "remedis/rng.hpp"
#include "remedis/tensor.hpp"

namespace remedis::models {

using Params = std::map<std::string, Tensor>;
using Bound = std::map<std::string, ad::Var>;

struct EncoderConfig {
  std::string preset = "small";
  int image_size = 32;
  int in_channels = 1;
  std::vector<int> widths{8, 16, 32};
  int depth = 1;  // conv blocks per stage
  int groups = 4;
  int embed_dim = 32;

  // "tiny", "small" or "large"; small and large stand in for the 1x/2x
  // backbones, tiny keeps tests and desk runs fast.
  static EncoderConfig from_preset(std::string_view name, int image_size, int in_channels);
  void validate() const;
  std::string to_json() const;
  static EncoderConfig from_json(std::string_view text);
  // Stable content hash of the configuration (hex).
  std::string hash() const;
};

enum class Provenance {
  kRandom = 0,
  kSupervisedPretrained = 1,
  kContrastivePretrained = 2,
  kFineTuned = 3,
};

std::string_view provenance_name(Provenance p);
Provenance parse_provenance(std::string_view name);
// Provenance only moves forward; fine-tuned may be fine-tuned again.
void check_transition(Provenance from, Provenance to);

struct EncoderState {
  EncoderConfig config;
  Params params;
  Provenance provenance = Provenance::kRandom;
};

std::size_t parameter_count(const EncoderConfig& config);
std::size_t count_parameters(const Params& params);

EncoderState build_encoder(const EncoderConfig& config, Rng& rng);

Bound bind(ad::Tape& tape, const Params& params, bool requires_grad);

// [N,C,H,W] -> [N,D]
ad::Var encode(const EncoderConfig& config, const Bound& params, ad::Var batch);
Tensor encode(const EncoderState& encoder, const Tensor& batch);

Params build_projection_head(int embed_dim, int hidden_dim, int out_dim, Rng& rng);
// Two fully connected layers with a ReLU between them: [N,D] -> [N,P].
ad::Var project(const Bound& head, ad::Var embeddings);
Tensor project(const Params& head, const Tensor& embeddings);

enum class HeadInit { kZeros, kRandom };

struct HeadConfig {
  int embed_dim = 32;
  int num_classes = 2;
  bool attention = false;
  int attention_hidden = 16;
};

Params build_classification_head(const HeadConfig& config, HeadInit init, Rng& rng);
ad::Var head_logits(const Bound& head, ad::Var embeddings);

// Softmax-weighted average of patch embeddings. patches [M,D], scores [1,M]
// -> [1,D].
ad::Var attention_pool(ad::Var patches, ad::Var scores);
// Learned per-patch scores w^T tanh(V e_m): [M,D] -> [1,M].
ad::Var attention_scores(const Bound& head, ad::Var patches);
std::vector<double> attention_pool(const Tensor& patches, std::span<const double> scores);

struct Model {
  EncoderState encoder;
  Params head;
  HeadConfig head_config;
};

Tensor stack_images(std::span<const Image* const> images);

// Case-level logits. Each case is one or more images; multi-image cases are
// pooled with attention when the head has an attention front end, otherwise
// the first image is used.
ad::Var case_logits(const Model& model, const Bound& encoder, const Bound& head,
                    std::span<const std::vector<const Image*>> cases, ad::Tape& tape);
Tensor classify(const Model& model, std::span<const std::vector<const Image*>> cases);
// Single-image convenience: batch [N,C,H,W] -> logits [N,K].
Tensor classify(const Model& model, const Tensor& batch);

}  // namespace remedis::models
