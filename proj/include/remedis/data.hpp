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

// Synthetic task bundles: an unlabeled pool D_u, a labeled in-distribution
// set D_in and a shifted out-of-distribution set D_out sharing D_in's label
// space, plus a separately labeled upstream proxy set for supervised
// pretraining.
//
// Records are procedurally rendered patterns (disc, ring, stripes, cross,
// square outline, ...) over a noisy background. D_out applies the shift
// transforms to the same generator:
//   technology  v' = (v - 0.5) * contrast + 0.5 + offset, then blur, noise
//   population  class prevalence and subgroup mixture of D_out
//   behavior    round(rate * n) seeded records per split relabeled (y+1) mod C

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "remedis/image.hpp"

namespace remedis::data {

struct Record {
  std::uint64_t id = 0;
  int label = -1;    // -1 for unlabeled records
  int pattern = -1;  // class actually rendered
  int subgroup = 0;
  double signal = 0.0;  // pattern amplitude
  std::vector<Image> views;
};

using Dataset = std::vector<Record>;

struct Splits {
  Dataset train;
  Dataset validation;
  Dataset test;
};

struct SplitSizes {
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;
};

struct TechnologyShift {
  double intensity_offset = 0.0;
  double contrast = 1.0;
  double blur_sigma = 0.0;
  double noise_std = 0.0;
};

struct PopulationShift {
  std::vector<double> class_prevalence;  // empty keeps the base prevalence
  std::vector<double> subgroup_weights;  // empty keeps the base weights
};

struct BehaviorShift {
  double label_noise_rate = 0.0;
};

struct ShiftSpec {
  TechnologyShift technology;
  PopulationShift population;
  BehaviorShift behavior;

  void validate(int num_classes, int num_subgroups) const;
  std::string to_json() const;
  static ShiftSpec from_json(const std::string& text);
  std::string hash() const;
};

struct BaseSpec {
  int image_size = 32;
  int num_classes = 3;
  int views_per_record = 1;
  double background_lo = 0.2;
  double background_hi = 0.3;
  double amplitude = 0.3;
  double texture_noise = 0.05;
  std::vector<double> class_prevalence;        // empty: uniform
  std::vector<double> subgroup_weights{0.5, 0.5};
  std::vector<double> subgroup_amplitude{1.0, 1.0};
  // Per-subgroup probability that a record shows another class's pattern.
  std::vector<double> subgroup_ambiguity{0.0, 0.0};
  std::size_t unlabeled = 2000;
  SplitSizes in_sizes{1500, 120, 400};
  SplitSizes out_sizes{1700, 430, 660};
  int upstream_classes = 6;
  SplitSizes upstream_sizes{2000, 0, 500};

  void validate() const;
  std::string to_json() const;
  static BaseSpec from_json(const std::string& text);
};

struct TaskBundle {
  std::uint64_t seed = 0;
  BaseSpec base;
  ShiftSpec shift;
  Dataset unlabeled;
  Splits in;
  Splits out;
  Splits upstream;
};

TaskBundle generate_task(std::uint64_t seed, const BaseSpec& base, const ShiftSpec& shift);

// Renders one image of `pattern`; exposed for tests and fixtures.
Image render_pattern(int pattern, int size, double amplitude, double background,
                     double noise, std::uint64_t seed);
void apply_technology_shift(Image& image, const TechnologyShift& shift, std::uint64_t seed);

// Stratified, nested subset: the per-class prefix of a seeded permutation.
// Size per class is round(fraction * count), at least 1 when fraction > 0.
std::vector<std::size_t> subsample_fraction(const Dataset& split, double fraction,
                                            std::uint64_t seed);

struct SplitFingerprint {
  std::string name;
  std::size_t count = 0;
  std::map<int, std::size_t> class_histogram;
  std::map<int, std::size_t> subgroup_histogram;
  double pixel_mean = 0.0;
  double pixel_variance = 0.0;
};

struct DatasetFingerprint {
  std::vector<SplitFingerprint> splits;
  std::string shift_hash;

  std::string to_json() const;
  std::string hash() const;
  const SplitFingerprint& split(const std::string& name) const;
};

SplitFingerprint fingerprint_split(const std::string& name, const Dataset& records);
DatasetFingerprint fingerprint(const TaskBundle& bundle);

// Directory layout: bundle.json, index.csv, pixels.bin (f64 little-endian,
// records in index order), fingerprint.json.
void save_bundle(const TaskBundle& bundle, const std::filesystem::path& dir);
TaskBundle load_bundle(const std::filesystem::path& dir);
// Git-style blob hash over the serialized index and pixels.
std::string bundle_hash(const TaskBundle& bundle);

}  // namespace remedis::data
