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

#include <algorithm>
#include <cmath>
#include <map>

#include "doctest.h"
#include "remedis/augment.hpp"
#include "remedis/error.hpp"

using namespace remedis;
using namespace remedis::augment;

namespace {

Image noise_image(int h, int w, int c, std::uint64_t seed) {
  Rng rng(seed);
  Image img(h, w, c);
  for (double& p : img.pixels) p = rng.uniform();
  return img;
}

Image smooth_image(int h, int w) {
  Image img(h, w, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img.at(0, y, x) = 0.5 + 0.3 * std::sin(y * 0.3) * std::cos(x * 0.2);
  return img;
}

}  // namespace

TEST_SUITE("augment") {
  TEST_CASE("crop resize") {
    const Image src = noise_image(6, 6, 1, 1);
    Rng rng(3);
    CHECK(random_crop_resize(src, rng, {1.0, 1.0}, {1.0, 1.0}, 6, 6) == src);
    CHECK_THROWS_AS(random_crop_resize(src, rng, {1.0, 1.0}, {1.0, 1.0}, 0, 6), Error);

    Image board(4, 4, 1);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) board.at(0, y, x) = (x + y) % 2;
    const Image tl = crop_resize(board, Box{0, 0, 2, 2}, 2, 2);
    CHECK(tl.pixels == std::vector<double>{0, 1, 1, 0});
  }

  TEST_CASE("crop area fraction Monte Carlo") {
    Rng rng(11);
    const Range area{0.08, 1.0};
    double total = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      const Box b = sample_crop_box(64, 64, rng, area, {1.0, 1.0});
      total += b.height * b.width / (64.0 * 64.0);
    }
    CHECK(std::abs(total / n - 0.54) < 0.02);
  }

  TEST_CASE("color distortion") {
    const Image src = noise_image(5, 5, 3, 2);
    Rng rng(4);
    CHECK(color_distort(src, rng, 0.0) == src);
    CHECK(adjust_brightness(Image(3, 3, 1, 0.5), 0.1) == Image(3, 3, 1, 0.5 + 0.1));
    Image two(1, 2, 1);
    two.pixels = {0.25, 0.75};
    CHECK(adjust_contrast(two, 2.0).pixels == std::vector<double>{0.0, 1.0});
    // Grayscale skips saturation and hue.
    const Image gray = noise_image(5, 5, 1, 3);
    CHECK(adjust_saturation(gray, 0.3) == gray);
    CHECK(adjust_hue(gray, 0.1) == gray);
  }

  TEST_CASE("gaussian blur") {
    Rng rng(5);
    const Image flat(9, 9, 1, 0.37);
    CHECK(blur_with_sigma(flat, 1.7, 0.5) == flat);
    const Image src = noise_image(9, 9, 1, 6);
    CHECK(gaussian_blur(src, rng, {0.1, 2.0}, 0.1, 0.0) == src);
    CHECK(blur_kernel_size(32, 0.1) == 3);
    CHECK(blur_kernel_size(40, 0.1) == 5);
    CHECK(blur_kernel_size(5, 0.1) == 1);

    Image impulse(1, 5, 1);
    impulse.pixels = {0, 0, 1, 0, 0};
    const Image out = blur_separable(impulse, 1.0, 1, 3);
    const double e = std::exp(-0.5);
    const double side = e / (1 + 2 * e), mid = 1 / (1 + 2 * e);
    CHECK(out.pixels[0] == 0.0);
    CHECK(out.pixels[1] == doctest::Approx(side).epsilon(1e-12));
    CHECK(out.pixels[2] == doctest::Approx(mid).epsilon(1e-12));
    CHECK(out.pixels[3] == doctest::Approx(side).epsilon(1e-12));
    CHECK(out.pixels[4] == 0.0);
  }

  TEST_CASE("rotation") {
    const Image src = noise_image(5, 7, 3, 7);
    Rng rng(1);
    CHECK(rotate_by(src, 0.0) == src);
    CHECK(rotate(src, rng, 0.0) == src);

    Image two(2, 2, 1);
    two.pixels = {0.1, 0.2, 0.3, 0.4};
    CHECK(rotate_by(two, 180.0).pixels == std::vector<double>{0.4, 0.3, 0.2, 0.1});

    const Image sq = noise_image(3, 3, 1, 8);
    const Image r = rotate_by(sq, 90.0);
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) CHECK(r.at(0, y, x) == sq.at(0, x, 2 - y));
  }

  TEST_CASE("histogram equalization") {
    const Image flat(4, 4, 1, 0.6);
    CHECK(histogram_equalize(flat) == flat);
    Image two(2, 2, 1);
    two.pixels = {0, 0, 1, 1};
    CHECK(histogram_equalize(two) == two);

    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Image img = noise_image(16, 16, 1, seed);
      for (double& p : img.pixels) p = p * p;  // skewed histogram
      const Image eq = histogram_equalize(img);
      std::map<double, int> levels;
      for (double p : eq.pixels) ++levels[p];
      int max_mass = 0;
      for (const auto& [_, count] : levels) max_mass = std::max(max_mass, count);
      int running = 0;
      for (const auto& [value, count] : levels) {
        running += count;
        const double cdf = running / 256.0;
        CHECK(std::abs(cdf - value) <= max_mass / 256.0 + 1e-12);
      }
    }
  }

  TEST_CASE("elastic deformation") {
    const Image src = noise_image(8, 8, 1, 9);
    Rng rng(2);
    CHECK(elastic_deform(src, rng, 0.0, 3.0) == src);
    const Image flat(8, 8, 1, 0.42);
    CHECK(elastic_deform(flat, rng, 5.0, 2.0) == flat);

    const Image smooth = smooth_image(32, 32);
    const double mu = mean_intensity(smooth);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng r(seed);
      const double alpha = 0.5 + 1.5 * (seed % 4) / 3.0;
      CHECK(std::abs(mean_intensity(elastic_deform(smooth, r, alpha, 3.0)) - mu) < 0.02 * mu);
    }
  }

  TEST_CASE("identity suite and invariants") {
    const Image src = noise_image(8, 8, 3, 10);
    Rng rng(1);
    CHECK(flip_horizontal(flip_horizontal(src)) == src);
    CHECK(adjust_brightness(src, 0.0) == src);
    CHECK(adjust_contrast(src, 1.0) == src);
    CHECK(adjust_saturation(src, 1.0) == src);
    CHECK(adjust_hue(src, 0.0) == src);
    CHECK(apply_policy(src, AugmentPolicy::none(), rng) == src);

    AugmentPolicy all;
    all.equalize = true;
    all.elastic = true;
    all.blur_probability = 1.0;
    all.color_probability = 1.0;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      Rng r(seed);
      const Image out = apply_policy(noise_image(12, 12, seed % 2 ? 3 : 1, seed), all, r);
      for (double p : out.pixels) {
        CHECK(std::isfinite(p));
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
      }
    }
  }

  TEST_CASE("view pairs") {
    const std::vector<Image> single{noise_image(8, 8, 1, 1)};
    Rng rng(3);
    ViewPair same = make_view_pair(single, AugmentPolicy::none(), rng);
    CHECK(same.first == same.second);
    CHECK(same.first == single[0]);
    CHECK_THROWS_AS(make_view_pair(std::span<const Image>{}, AugmentPolicy::none(), rng), Error);

    std::vector<Image> four;
    for (int i = 0; i < 4; ++i) four.push_back(noise_image(8, 8, 1, 20 + i));
    Rng a(77), b(77);
    const ViewPair va = make_view_pair(four, AugmentPolicy{}, a);
    const ViewPair vb = make_view_pair(four, AugmentPolicy{}, b);
    Rng oracle(77);
    CHECK(va.view_index == oracle.index(4));
    CHECK(va.view_index < 4);
    CHECK(va.first == vb.first);
    CHECK(va.second == vb.second);

    AugmentPolicy crop_only = AugmentPolicy::none();
    crop_only.crop = true;
    crop_only.out_height = 6;
    crop_only.out_width = 6;
    const ViewPair vc = make_view_pair(four, crop_only, a);
    CHECK(vc.first.height == 6);
    CHECK(vc.second.width == 6);
    CHECK(vc.first != vc.second);
  }
}
