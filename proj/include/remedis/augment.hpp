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

// Stochastic view generation. Every op is a pure function of its inputs and
// the supplied Rng; outputs are clamped to [0, 1]. Ops with neutral
// parameters return the input unchanged (bit-exact).

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "remedis/image.hpp"
#include "remedis/rng.hpp"

namespace remedis::augment {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct Box {
  double top = 0.0;
  double left = 0.0;
  double height = 0.0;
  double width = 0.0;
};

struct AugmentPolicy {
  bool crop = true;
  Range crop_area{0.08, 1.0};
  Range crop_aspect{3.0 / 4.0, 4.0 / 3.0};
  double flip_probability = 0.5;

  bool color = true;
  double color_strength = 1.0;
  double color_probability = 0.8;

  bool rotate = true;
  double rotation_degrees = 45.0;

  bool blur = true;
  Range blur_sigma{0.1, 2.0};
  double blur_kernel_fraction = 0.1;
  double blur_probability = 0.5;

  bool equalize = false;

  bool elastic = false;
  double elastic_alpha = 2.0;
  double elastic_sigma = 3.0;

  int out_height = 0;  // 0 keeps the source size
  int out_width = 0;

  // Everything disabled; views are resized copies.
  static AugmentPolicy none();
  void validate() const;
};

// Inception-style box: area fraction ~ U(area), log-aspect ~ U(log aspect).
// Falls back to the full frame after 10 rejected draws.
Box sample_crop_box(int height, int width, Rng& rng, Range area, Range aspect);
// Bilinear resample of `box` to out_h x out_w (edge-clamped sampling).
Image crop_resize(const Image& image, const Box& box, int out_h, int out_w);
Image random_crop_resize(const Image& image, Rng& rng, Range area, Range aspect, int out_h,
                         int out_w);
Image flip_horizontal(const Image& image);

Image adjust_brightness(const Image& image, double delta);
Image adjust_contrast(const Image& image, double factor);
Image adjust_saturation(const Image& image, double factor);
Image adjust_hue(const Image& image, double shift);
Image color_distort(const Image& image, Rng& rng, double strength);

// Odd kernel side: max(1, round(fraction * extent)), bumped to odd.
int blur_kernel_size(int extent, double fraction);
std::vector<double> gaussian_kernel(int size, double sigma);
Image blur_with_sigma(const Image& image, double sigma, double kernel_fraction);
Image blur_separable(const Image& image, double sigma, int kernel_h, int kernel_w);
Image gaussian_blur(const Image& image, Rng& rng, Range sigma, double kernel_fraction,
                    double probability);

// Counter-clockwise rotation about the image center; outside samples are 0.
Image rotate_by(const Image& image, double degrees);
Image rotate(const Image& image, Rng& rng, double range_degrees);

Image histogram_equalize(const Image& image);

Image elastic_deform(const Image& image, Rng& rng, double alpha, double sigma);

Image apply_policy(const Image& image, const AugmentPolicy& policy, Rng& rng);

struct ViewPair {
  Image first;
  Image second;
  std::size_t view_index = 0;
};

// Picks one of the record's images uniformly (when more than one), then
// applies the policy twice with independent streams.
ViewPair make_view_pair(std::span<const Image> views, const AugmentPolicy& policy, Rng& rng);

}  // namespace remedis::augment
