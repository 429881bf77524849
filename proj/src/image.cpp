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

#include "remedis/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "remedis/error.hpp"

namespace remedis {

void clamp_unit(Image& image) {
  for (double& p : image.pixels) p = std::clamp(p, 0.0, 1.0);
}

double mean_intensity(const Image& image) {
  if (image.pixels.empty()) return 0.0;
  double acc = 0.0;
  for (double p : image.pixels) acc += p;
  return acc / static_cast<double>(image.pixels.size());
}

namespace {

std::string next_token(std::istream& in) {
  std::string tok;
  while (in >> tok) {
    if (tok[0] == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    return tok;
  }
  fail(ErrorCode::kIo, "pgm: truncated header");
}

}  // namespace

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "pgm: cannot open " + path.string());
  const std::string magic = next_token(in);
  if (magic != "P2" && magic != "P5") fail(ErrorCode::kIo, "pgm: unsupported magic " + magic);
  const int width = std::stoi(next_token(in));
  const int height = std::stoi(next_token(in));
  const int maxval = std::stoi(next_token(in));
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535) {
    fail(ErrorCode::kIo, "pgm: bad header in " + path.string());
  }
  Image img(height, width, 1);
  if (magic == "P2") {
    for (double& p : img.pixels) p = std::stod(next_token(in)) / maxval;
  } else {
    in.get();  // single whitespace after maxval
    const int bytes = maxval < 256 ? 1 : 2;
    for (double& p : img.pixels) {
      int v = in.get();
      if (bytes == 2) v = (v << 8) | in.get();
      if (!in) fail(ErrorCode::kIo, "pgm: truncated pixel data in " + path.string());
      p = static_cast<double>(v) / maxval;
    }
  }
  return img;
}

void write_pgm(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 1) fail(ErrorCode::kInvalidArgument, "pgm: single-channel images only");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "pgm: cannot write " + path.string());
  out << "P5\n" << image.width << " " << image.height << "\n65535\n";
  for (double p : image.pixels) {
    const auto v = static_cast<unsigned>(std::lround(std::clamp(p, 0.0, 1.0) * 65535.0));
    out.put(static_cast<char>(v >> 8));
    out.put(static_cast<char>(v & 0xff));
  }
}

}  // namespace remedis
