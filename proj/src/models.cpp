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

#include "remedis/models.hpp"

#include <cmath>
#include "json.hpp"

#include "remedis/error.hpp"
#include "remedis/hash.hpp"

namespace remedis::models {
namespace {

using nlohmann::json;

std::string conv_prefix(std::size_t stage, int block) {
  return "enc.s" + std::to_string(stage) + ".b" + std::to_string(block);
}

Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

const ad::Var& lookup(const Bound& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) fail(ErrorCode::kInvalidArgument, "model: missing parameter " + name);
  return it->second;
}

}  // namespace

EncoderConfig EncoderConfig::from_preset(std::string_view name, int image_size, int in_channels) {
  EncoderConfig cfg;
  cfg.preset = std::string(name);
  cfg.image_size = image_size;
  cfg.in_channels = in_channels;
  if (name == "small") {
    cfg.widths = {8, 16, 32};
    cfg.depth = 1;
    cfg.groups = 4;
    cfg.embed_dim = 32;
  } else if (name == "tiny") {
    cfg.widths = {8, 16};
    cfg.depth = 1;
    cfg.groups = 4;
    cfg.embed_dim = 16;
  } else if (name == "large") {
    cfg.widths = {16, 32, 64};
    cfg.depth = 2;
    cfg.groups = 8;
    cfg.embed_dim = 64;
  } else {
    fail(ErrorCode::kInvalidArgument, "encoder: unknown preset '" + std::string(name) + "'");
  }
  return cfg;
}

void EncoderConfig::validate() const {
  require(image_size > 0, "encoder: image_size must be positive");
  require(in_channels == 1 || in_channels == 3, "encoder: in_channels must be 1 or 3");
  require(!widths.empty(), "encoder: at least one stage required");
  require(depth >= 1, "encoder: depth must be >= 1");
  require(embed_dim > 0, "encoder: embedding dim must be positive");
  require(groups >= 1, "encoder: groups must be >= 1");
  for (int w : widths) {
    require(w > 0 && w % groups == 0,
            "encoder: " + std::to_string(groups) + " groups do not divide stage width " +
                std::to_string(w));
  }
}

std::string EncoderConfig::to_json() const {
  json j{{"preset", preset},       {"image_size", image_size}, {"in_channels", in_channels},
         {"widths", widths},       {"depth", depth},           {"groups", groups},
         {"embed_dim", embed_dim}};
  return j.dump();
}

EncoderConfig EncoderConfig::from_json(std::string_view text) {
  const json j = json::parse(text);
  EncoderConfig cfg;
  cfg.preset = j.at("preset").get<std::string>();
  cfg.image_size = j.at("image_size").get<int>();
  cfg.in_channels = j.at("in_channels").get<int>();
  cfg.widths = j.at("widths").get<std::vector<int>>();
  cfg.depth = j.at("depth").get<int>();
  cfg.groups = j.at("groups").get<int>();
  cfg.embed_dim = j.at("embed_dim").get<int>();
  return cfg;
}

std::string EncoderConfig::hash() const { return git_blob_hash(to_json()).substr(0, 16); }

std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::kRandom: return "random";
    case Provenance::kSupervisedPretrained: return "supervised-pretrained";
    case Provenance::kContrastivePretrained: return "contrastive-pretrained";
    case Provenance::kFineTuned: return "fine-tuned";
  }
  return "unknown";
}

Provenance parse_provenance(std::string_view name) {
  for (Provenance p : {Provenance::kRandom, Provenance::kSupervisedPretrained,
                       Provenance::kContrastivePretrained, Provenance::kFineTuned}) {
    if (provenance_name(p) == name) return p;
  }
  fail(ErrorCode::kInvalidArgument, "unknown provenance '" + std::string(name) + "'");
}

void check_transition(Provenance from, Provenance to) {
  const bool forward = static_cast<int>(to) > static_cast<int>(from);
  const bool refine = from == Provenance::kFineTuned && to == Provenance::kFineTuned;
  if (!forward && !refine) {
    fail(ErrorCode::kInvalidArgument, "provenance cannot move from " +
                                          std::string(provenance_name(from)) + " to " +
                                          std::string(provenance_name(to)));
  }
}

std::size_t parameter_count(const EncoderConfig& config) {
  std::size_t total = 0;
  std::size_t in = static_cast<std::size_t>(config.in_channels);
  for (int w : config.widths) {
    const auto out = static_cast<std::size_t>(w);
    for (int b = 0; b < config.depth; ++b) {
      total += out * in * 9 + 2 * out;
      in = out;
    }
  }
  const auto d = static_cast<std::size_t>(config.embed_dim);
  return total + in * d + d;
}

std::size_t count_parameters(const Params& params) {
  std::size_t total = 0;
  for (const auto& [name, t] : params) total += t.size();
  return total;
}

EncoderState build_encoder(const EncoderConfig& config, Rng& rng) {
  config.validate();
  EncoderState state;
  state.config = config;
  std::size_t in = static_cast<std::size_t>(config.in_channels);
  for (std::size_t s = 0; s < config.widths.size(); ++s) {
    const auto out = static_cast<std::size_t>(config.widths[s]);
    for (int b = 0; b < config.depth; ++b) {
      const std::string p = conv_prefix(s, b);
      state.params[p + ".conv.w"] = he_uniform({out, in, 3, 3}, in * 9, rng);
      state.params[p + ".gn.gamma"] = Tensor({out}, 1.0);
      state.params[p + ".gn.beta"] = Tensor({out}, 0.0);
      in = out;
    }
  }
  const auto d = static_cast<std::size_t>(config.embed_dim);
  state.params["enc.fc.w"] = he_uniform({in, d}, in, rng);
  state.params["enc.fc.b"] = Tensor({d}, 0.0);
  return state;
}

Bound bind(ad::Tape& tape, const Params& params, bool requires_grad) {
  Bound out;
  for (const auto& [name, t] : params) out.emplace(name, tape.leaf(t, requires_grad));
  return out;
}

ad::Var encode(const EncoderConfig& config, const Bound& params, ad::Var batch) {
  const Shape& shape = batch.shape();
  if (shape.size() != 4 || shape[1] != static_cast<std::size_t>(config.in_channels) ||
      shape[2] != static_cast<std::size_t>(config.image_size) ||
      shape[3] != static_cast<std::size_t>(config.image_size)) {
    fail(ErrorCode::kShapeMismatch,
         "encode: batch " + shape_str(shape) + " does not match encoder input [N," +
             std::to_string(config.in_channels) + "," + std::to_string(config.image_size) +
             "," + std::to_string(config.image_size) + "]");
  }
  ad::Var x = batch;
  for (std::size_t s = 0; s < config.widths.size(); ++s) {
    for (int b = 0; b < config.depth; ++b) {
      const std::string p = conv_prefix(s, b);
      const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
      ad::Var w = ad::weight_standardize(lookup(params, p + ".conv.w"));
      x = ad::conv2d(x, w, stride, 1);
      x = ad::group_norm(x, lookup(params, p + ".gn.gamma"), lookup(params, p + ".gn.beta"),
                         static_cast<std::size_t>(config.groups));
      x = ad::relu(x);
    }
  }
  x = ad::global_avg_pool(x);
  return ad::add(ad::matmul(x, lookup(params, "enc.fc.w")), lookup(params, "enc.fc.b"));
}

Tensor encode(const EncoderState& encoder, const Tensor& batch) {
  ad::Tape tape;
  Bound bound = bind(tape, encoder.params, false);
  return encode(encoder.config, bound, tape.constant(batch)).value();
}

Params build_projection_head(int embed_dim, int hidden_dim, int out_dim, Rng& rng) {
  require(embed_dim > 0 && hidden_dim > 0 && out_dim > 0, "projection head: dims must be > 0");
  const auto d = static_cast<std::size_t>(embed_dim);
  const auto h = static_cast<std::size_t>(hidden_dim);
  const auto p = static_cast<std::size_t>(out_dim);
  Params params;
  params["proj.fc1.w"] = he_uniform({d, h}, d, rng);
  params["proj.fc1.b"] = Tensor({h}, 0.0);
  params["proj.fc2.w"] = he_uniform({h, p}, h, rng);
  params["proj.fc2.b"] = Tensor({p}, 0.0);
  return params;
}

ad::Var project(const Bound& head, ad::Var embeddings) {
  ad::Var h = ad::add(ad::matmul(embeddings, lookup(head, "proj.fc1.w")),
                      lookup(head, "proj.fc1.b"));
  h = ad::relu(h);
  return ad::add(ad::matmul(h, lookup(head, "proj.fc2.w")), lookup(head, "proj.fc2.b"));
}

Tensor project(const Params& head, const Tensor& embeddings) {
  ad::Tape tape;
  Bound bound = bind(tape, head, false);
  return project(bound, tape.constant(embeddings)).value();
}

Params build_classification_head(const HeadConfig& config, HeadInit init, Rng& rng) {
  require(config.embed_dim > 0 && config.num_classes >= 2,
          "classification head: need embed_dim > 0 and at least two classes");
  const auto d = static_cast<std::size_t>(config.embed_dim);
  const auto k = static_cast<std::size_t>(config.num_classes);
  Params params;
  Tensor w({d, k});
  if (init == HeadInit::kRandom) {
    for (double& v : w.data()) v = rng.normal(0.0, 0.01);
  }
  params["head.w"] = std::move(w);
  params["head.b"] = Tensor({k}, 0.0);
  if (config.attention) {
    const auto l = static_cast<std::size_t>(config.attention_hidden);
    params["attn.v"] = he_uniform({d, l}, d, rng);
    Tensor aw({l, 1});
    for (double& v : aw.data()) v = rng.normal(0.0, 0.01);
    params["attn.w"] = std::move(aw);
  }
  return params;
}

ad::Var head_logits(const Bound& head, ad::Var embeddings) {
  return ad::add(ad::matmul(embeddings, lookup(head, "head.w")), lookup(head, "head.b"));
}

ad::Var attention_pool(ad::Var patches, ad::Var scores) {
  const Shape& ps = patches.shape();
  if (ps.size() != 2 || ps[0] == 0) {
    fail(ErrorCode::kInvalidArgument, "attention_pool: need at least one patch embedding");
  }
  if (scores.shape() != Shape{1, ps[0]}) {
    fail(ErrorCode::kShapeMismatch, "attention_pool: scores " + shape_str(scores.shape()) +
                                        " for patches " + shape_str(ps));
  }
  return ad::matmul(ad::softmax_rows(scores), patches);
}

ad::Var attention_scores(const Bound& head, ad::Var patches) {
  ad::Var hidden = ad::tanh(ad::matmul(patches, lookup(head, "attn.v")));
  ad::Var s = ad::matmul(hidden, lookup(head, "attn.w"));
  return ad::transpose(s);
}

std::vector<double> attention_pool(const Tensor& patches, std::span<const double> scores) {
  if (patches.rank() != 2 || patches.dim(0) == 0) {
    fail(ErrorCode::kInvalidArgument, "attention_pool: need at least one patch embedding");
  }
  ad::Tape tape;
  ad::Var p = tape.constant(patches);
  ad::Var s = tape.constant(Tensor({1, scores.size()}, {scores.begin(), scores.end()}));
  const Tensor& out = attention_pool(p, s).value();
  return {out.data().begin(), out.data().end()};
}

Tensor stack_images(std::span<const Image* const> images) {
  if (images.empty()) fail(ErrorCode::kInvalidArgument, "stack_images: empty batch");
  const Image& first = *images[0];
  const std::size_t per = first.pixels.size();
  Tensor out({images.size(), static_cast<std::size_t>(first.channels),
              static_cast<std::size_t>(first.height), static_cast<std::size_t>(first.width)});
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& img = *images[i];
    if (img.height != first.height || img.width != first.width ||
        img.channels != first.channels) {
      fail(ErrorCode::kShapeMismatch, "stack_images: mixed image sizes in batch");
    }
    std::copy(img.pixels.begin(), img.pixels.end(), out.raw() + i * per);
  }
  return out;
}

ad::Var case_logits(const Model& model, const Bound& encoder, const Bound& head,
                    std::span<const std::vector<const Image*>> cases, ad::Tape& tape) {
  if (cases.empty()) fail(ErrorCode::kInvalidArgument, "classify: empty batch");
  const bool pooled = model.head_config.attention;
  if (!pooled) {
    std::vector<const Image*> firsts;
    firsts.reserve(cases.size());
    for (const auto& c : cases) {
      if (c.empty()) fail(ErrorCode::kInvalidArgument, "classify: case without images");
      firsts.push_back(c.front());
    }
    ad::Var emb = encode(model.encoder.config, encoder, tape.constant(stack_images(firsts)));
    return head_logits(head, emb);
  }
  std::vector<ad::Var> pooled_rows;
  pooled_rows.reserve(cases.size());
  for (const auto& c : cases) {
    if (c.empty()) fail(ErrorCode::kInvalidArgument, "attention_pool: case without images");
    ad::Var emb = encode(model.encoder.config, encoder, tape.constant(stack_images(c)));
    pooled_rows.push_back(attention_pool(emb, attention_scores(head, emb)));
  }
  return head_logits(head, ad::concat(pooled_rows));
}

Tensor classify(const Model& model, std::span<const std::vector<const Image*>> cases) {
  ad::Tape tape;
  Bound enc = bind(tape, model.encoder.params, false);
  Bound head = bind(tape, model.head, false);
  return case_logits(model, enc, head, cases, tape).value();
}

Tensor classify(const Model& model, const Tensor& batch) {
  ad::Tape tape;
  Bound enc = bind(tape, model.encoder.params, false);
  Bound head = bind(tape, model.head, false);
  return head_logits(head, encode(model.encoder.config, enc, tape.constant(batch))).value();
}

}  // namespace remedis::models
