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

// Binary checkpoint of named tensors plus string metadata.
//
// Layout (little-endian):
//   8 bytes  magic "RMDSCKPT"
//   u32      format version (1)
//   u32      metadata entry count, then per entry: u32 len + key, u32 len + value
//   u32      tensor count, then per tensor (sorted by name):
//            u32 len + name, u32 rank, u64 extents[rank], f64 data[product]

#include <filesystem>
#include <map>
#include <string>

#include "remedis/models.hpp"

namespace remedis {

struct Checkpoint {
  std::map<std::string, std::string> meta;
  models::Params tensors;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint model_checkpoint(const models::Model& model, std::size_t step);
models::Model model_from_checkpoint(const Checkpoint& ckpt);
Checkpoint encoder_checkpoint(const models::EncoderState& encoder, std::size_t step);
models::EncoderState encoder_from_checkpoint(const Checkpoint& ckpt);

}  // namespace remedis
