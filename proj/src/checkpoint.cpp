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

#include "remedis/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "remedis/error.hpp"

namespace remedis {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

constexpr char kMagic[8] = {'R', 'M', 'D', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string() {
    const auto len = get<std::uint32_t>();
    need(len);
    std::string s = bytes_.substr(pos_, len);
    pos_ += len;
    return s;
  }

  void read(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) fail(ErrorCode::kIo, "checkpoint: truncated data");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

void split_params(const models::Params& all, models::Params& encoder, models::Params& rest) {
  for (const auto& [name, t] : all) {
    if (name.rfind("enc.", 0) == 0) {
      encoder.emplace(name, t);
    } else {
      rest.emplace(name, t);
    }
  }
}

const std::string& meta_at(const Checkpoint& ckpt, const std::string& key) {
  auto it = ckpt.meta.find(key);
  if (it == ckpt.meta.end()) fail(ErrorCode::kIo, "checkpoint: missing metadata '" + key + "'");
  return it->second;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.meta.size()));
  for (const auto& [k, v] : ckpt.meta) {
    put_string(out, k);
    put_string(out, v);
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_string(out, name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.raw()), t.size() * sizeof(double));
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorCode::kIo, "checkpoint: bad magic");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kVersion) {
    fail(ErrorCode::kIo, "checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto meta_count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < meta_count; ++i) {
    std::string k = in.get_string();
    ckpt.meta[k] = in.get_string();
  }
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = in.get_string();
    const auto rank = in.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(in.get<std::uint64_t>());
    Tensor t(shape);
    in.read(t.raw(), t.size() * sizeof(double));
    ckpt.tensors.emplace(std::move(name), std::move(t));
  }
  if (!in.done()) fail(ErrorCode::kIo, "checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "checkpoint: cannot write " + path.string());
  const std::string bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, "checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "checkpoint: cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

Checkpoint encoder_checkpoint(const models::EncoderState& encoder, std::size_t step) {
  Checkpoint ckpt;
  ckpt.meta["kind"] = "encoder";
  ckpt.meta["config"] = encoder.config.to_json();
  ckpt.meta["config_hash"] = encoder.config.hash();
  ckpt.meta["provenance"] = std::string(models::provenance_name(encoder.provenance));
  ckpt.meta["step"] = std::to_string(step);
  ckpt.tensors = encoder.params;
  return ckpt;
}

models::EncoderState encoder_from_checkpoint(const Checkpoint& ckpt) {
  models::EncoderState state;
  state.config = models::EncoderConfig::from_json(meta_at(ckpt, "config"));
  state.provenance = models::parse_provenance(meta_at(ckpt, "provenance"));
  models::Params rest;
  split_params(ckpt.tensors, state.params, rest);
  return state;
}

Checkpoint model_checkpoint(const models::Model& model, std::size_t step) {
  Checkpoint ckpt = encoder_checkpoint(model.encoder, step);
  ckpt.meta["kind"] = "model";
  ckpt.meta["num_classes"] = std::to_string(model.head_config.num_classes);
  ckpt.meta["attention"] = model.head_config.attention ? "1" : "0";
  ckpt.meta["attention_hidden"] = std::to_string(model.head_config.attention_hidden);
  for (const auto& [name, t] : model.head) ckpt.tensors.emplace(name, t);
  return ckpt;
}

models::Model model_from_checkpoint(const Checkpoint& ckpt) {
  if (meta_at(ckpt, "kind") != "model") {
    fail(ErrorCode::kInvalidArgument, "checkpoint: not a model checkpoint");
  }
  models::Model model;
  model.encoder.config = models::EncoderConfig::from_json(meta_at(ckpt, "config"));
  model.encoder.provenance = models::parse_provenance(meta_at(ckpt, "provenance"));
  split_params(ckpt.tensors, model.encoder.params, model.head);
  model.head_config.embed_dim = model.encoder.config.embed_dim;
  model.head_config.num_classes = std::stoi(meta_at(ckpt, "num_classes"));
  model.head_config.attention = meta_at(ckpt, "attention") == "1";
  model.head_config.attention_hidden = std::stoi(meta_at(ckpt, "attention_hidden"));
  return model;
}

}  // namespace remedis
