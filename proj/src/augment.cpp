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

#include "remedis/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "remedis/error.hpp"

namespace remedis::augment {
namespace {

// Bilinear sample in difference form so constant neighbourhoods reproduce
// their value exactly.
double bilinear(const Image& img, int c, double y, double x, bool zero_outside) {
  const int h = img.height, w = img.width;
  if (zero_outside) {
    if (y <= -1.0 || x <= -1.0 || y >= h || x >= w) return 0.0;
  } else {
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  }
  const double fy0 = std::floor(y), fx0 = std::floor(x);
  const int y0 = static_cast<int>(fy0), x0 = static_cast<int>(fx0);
  const double fy = y - fy0, fx = x - fx0;
  auto px = [&](int yy, int xx) -> double {
    if (yy < 0 || xx < 0 || yy >= h || xx >= w) {
      if (zero_outside) return 0.0;
      yy = std::clamp(yy, 0, h - 1);
      xx = std::clamp(xx, 0, w - 1);
    }
    return img.at(c, yy, xx);
  };
  const double p00 = px(y0, x0);
  if (fy == 0.0 && fx == 0.0) return p00;
  const double p01 = px(y0, x0 + 1), p10 = px(y0 + 1, x0), p11 = px(y0 + 1, x0 + 1);
  return p00 + fx * (p01 - p00) + fy * (p10 - p00) + fx * fy * (p11 - p10 - p01 + p00);
}

double luminance(const Image& img, std::size_t i) {
  if (img.channels == 1) return img.pixels[i];
  const std::size_t p = img.plane();
  return 0.299 * img.pixels[i] + 0.587 * img.pixels[p + i] + 0.114 * img.pixels[2 * p + i];
}

// Separable 1-D convolution along one axis with edge replication, written
// relative to the centre pixel.
Image convolve_axis(const Image& img, const std::vector<double>& kernel, bool vertical) {
  const int radius = static_cast<int>(kernel.size() / 2);
  if (radius == 0) return img;
  Image out = img;
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        const double center = img.at(c, y, x);
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          const int yy = vertical ? std::clamp(y + k, 0, img.height - 1) : y;
          const int xx = vertical ? x : std::clamp(x + k, 0, img.width - 1);
          acc += kernel[static_cast<std::size_t>(k + radius)] * (img.at(c, yy, xx) - center);
        }
        out.at(c, y, x) = center + acc;
      }
    }
  }
  return out;
}

void check_image(const Image& image, const char* op) {
  if (image.height <= 0 || image.width <= 0 || (image.channels != 1 && image.channels != 3) ||
      image.pixels.size() != image.plane() * static_cast<std::size_t>(image.channels)) {
    fail(ErrorCode::kInvalidArgument, std::string(op) + ": malformed image");
  }
}

}  // namespace

AugmentPolicy AugmentPolicy::none() {
  AugmentPolicy p;
  p.crop = false;
  p.flip_probability = 0.0;
  p.color = false;
  p.rotate = false;
  p.blur = false;
  p.equalize = false;
  p.elastic = false;
  return p;
}

void AugmentPolicy::validate() const {
  auto prob = [](double p, const char* name) {
    require(p >= 0.0 && p <= 1.0, std::string("augment policy: ") + name + " not in [0,1]");
  };
  prob(flip_probability, "flip_probability");
  prob(color_probability, "color_probability");
  prob(blur_probability, "blur_probability");
  require(crop_area.lo > 0.0 && crop_area.lo <= crop_area.hi && crop_area.hi <= 1.0,
          "augment policy: crop area range must lie in (0,1]");
  require(crop_aspect.lo > 0.0 && crop_aspect.lo <= crop_aspect.hi,
          "augment policy: aspect range must be positive");
  require(color_strength >= 0.0, "augment policy: color strength must be >= 0");
  require(rotation_degrees >= 0.0, "augment policy: rotation range must be >= 0");
  require(blur_sigma.lo > 0.0 && blur_sigma.lo <= blur_sigma.hi,
          "augment policy: blur sigma range must be positive");
  require(blur_kernel_fraction > 0.0 && blur_kernel_fraction <= 1.0,
          "augment policy: blur kernel fraction must lie in (0,1]");
  require(elastic_alpha >= 0.0 && elastic_sigma > 0.0,
          "augment policy: elastic alpha >= 0 and sigma > 0 required");
  require(out_height >= 0 && out_width >= 0, "augment policy: negative output size");
}

Box sample_crop_box(int height, int width, Rng& rng, Range area, Range aspect) {
  require(area.lo > 0.0 && area.lo <= area.hi && area.hi <= 1.0,
          "random_crop_resize: area range must lie in (0,1]");
  require(aspect.lo > 0.0 && aspect.lo <= aspect.hi,
          "random_crop_resize: aspect range must be positive");
  const double total = static_cast<double>(height) * width;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = total * rng.uniform(area.lo, area.hi);
    const double ratio = std::exp(rng.uniform(std::log(aspect.lo), std::log(aspect.hi)));
    const double w = std::sqrt(target * ratio);
    const double h = std::sqrt(target / ratio);
    if (w <= width && h <= height) {
      const double top = rng.uniform(0.0, height - h);
      const double left = rng.uniform(0.0, width - w);
      return Box{top, left, h, w};
    }
  }
  return Box{0.0, 0.0, static_cast<double>(height), static_cast<double>(width)};
}

Image crop_resize(const Image& image, const Box& box, int out_h, int out_w) {
  check_image(image, "crop_resize");
  if (out_h <= 0 || out_w <= 0) {
    fail(ErrorCode::kInvalidArgument, "random_crop_resize: output size must be positive");
  }
  Image out(out_h, out_w, image.channels);
  const double sy = box.height / out_h, sx = box.width / out_w;
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x) {
        const double src_y = box.top + (y + 0.5) * sy - 0.5;
        const double src_x = box.left + (x + 0.5) * sx - 0.5;
        out.at(c, y, x) = bilinear(image, c, src_y, src_x, false);
      }
  clamp_unit(out);
  return out;
}

Image random_crop_resize(const Image& image, Rng& rng, Range area, Range aspect, int out_h,
                         int out_w) {
  if (out_h <= 0 || out_w <= 0) {
    fail(ErrorCode::kInvalidArgument, "random_crop_resize: output size must be positive");
  }
  const Box box = sample_crop_box(image.height, image.width, rng, area, aspect);
  return crop_resize(image, box, out_h, out_w);
}

Image flip_horizontal(const Image& image) {
  Image out = image;
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) out.at(c, y, x) = image.at(c, y, image.width - 1 - x);
  return out;
}

Image adjust_brightness(const Image& image, double delta) {
  if (delta == 0.0) return image;
  Image out = image;
  for (double& p : out.pixels) p += delta;
  clamp_unit(out);
  return out;
}

Image adjust_contrast(const Image& image, double factor) {
  if (factor == 1.0) return image;
  double mu = 0.0;
  for (std::size_t i = 0; i < image.plane(); ++i) mu += luminance(image, i);
  mu /= static_cast<double>(image.plane());
  Image out = image;
  for (double& p : out.pixels) p = (p - mu) * factor + mu;
  clamp_unit(out);
  return out;
}

Image adjust_saturation(const Image& image, double factor) {
  if (factor == 1.0 || image.channels == 1) return image;
  Image out = image;
  const std::size_t plane = image.plane();
  for (std::size_t i = 0; i < plane; ++i) {
    const double lum = luminance(image, i);
    for (int c = 0; c < 3; ++c) {
      double& p = out.pixels[c * plane + i];
      p = lum + factor * (p - lum);
    }
  }
  clamp_unit(out);
  return out;
}

Image adjust_hue(const Image& image, double shift) {
  if (shift == 0.0 || image.channels == 1) return image;
  // Rotate chroma in YIQ space by 2*pi*shift.
  const double angle = 2.0 * std::numbers::pi * shift;
  const double cs = std::cos(angle), sn = std::sin(angle);
  Image out = image;
  const std::size_t plane = image.plane();
  for (std::size_t i = 0; i < plane; ++i) {
    const double r = image.pixels[i], g = image.pixels[plane + i], b = image.pixels[2 * plane + i];
    const double yv = 0.299 * r + 0.587 * g + 0.114 * b;
    const double iv = 0.596 * r - 0.274 * g - 0.322 * b;
    const double qv = 0.211 * r - 0.523 * g + 0.312 * b;
    const double i2 = cs * iv - sn * qv;
    const double q2 = sn * iv + cs * qv;
    out.pixels[i] = yv + 0.956 * i2 + 0.621 * q2;
    out.pixels[plane + i] = yv - 0.272 * i2 - 0.647 * q2;
    out.pixels[2 * plane + i] = yv - 1.106 * i2 + 1.703 * q2;
  }
  clamp_unit(out);
  return out;
}

Image color_distort(const Image& image, Rng& rng, double strength) {
  require(strength >= 0.0, "color_distort: strength must be >= 0");
  if (strength == 0.0) return image;
  const double amp = 0.8 * strength;
  const double brightness = rng.uniform(-amp, amp);
  const double contrast = rng.uniform(std::max(0.0, 1.0 - amp), 1.0 + amp);
  const double saturation = rng.uniform(std::max(0.0, 1.0 - amp), 1.0 + amp);
  const double hue = rng.uniform(-0.2 * strength, 0.2 * strength);
  // Random application order, as in the usual colour-jitter transform.
  std::array<int, 4> order{0, 1, 2, 3};
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.index(i + 1)]);
  Image out = image;
  for (int op : order) {
    switch (op) {
      case 0: out = adjust_brightness(out, brightness); break;
      case 1: out = adjust_contrast(out, contrast); break;
      case 2: out = adjust_saturation(out, saturation); break;
      default: out = adjust_hue(out, hue); break;
    }
  }
  return out;
}

int blur_kernel_size(int extent, double fraction) {
  int k = std::max(1, static_cast<int>(std::lround(fraction * extent)));
  if (k % 2 == 0) ++k;
  return k;
}

std::vector<double> gaussian_kernel(int size, double sigma) {
  require(size >= 1 && size % 2 == 1, "gaussian_kernel: size must be odd and positive");
  require(sigma > 0.0, "gaussian_kernel: sigma must be positive");
  std::vector<double> k(static_cast<std::size_t>(size));
  const int r = size / 2;
  double total = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[static_cast<std::size_t>(i + r)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    total += k[static_cast<std::size_t>(i + r)];
  }
  for (double& v : k) v /= total;
  return k;
}

Image blur_with_sigma(const Image& image, double sigma, double kernel_fraction) {
  check_image(image, "gaussian_blur");
  return blur_separable(image, sigma, blur_kernel_size(image.height, kernel_fraction),
                        blur_kernel_size(image.width, kernel_fraction));
}

Image blur_separable(const Image& image, double sigma, int kernel_h, int kernel_w) {
  check_image(image, "gaussian_blur");
  const auto ky = gaussian_kernel(kernel_h, sigma);
  const auto kx = gaussian_kernel(kernel_w, sigma);
  Image out = convolve_axis(convolve_axis(image, kx, false), ky, true);
  clamp_unit(out);
  return out;
}

Image gaussian_blur(const Image& image, Rng& rng, Range sigma, double kernel_fraction,
                    double probability) {
  require(sigma.lo > 0.0 && sigma.lo <= sigma.hi, "gaussian_blur: sigma range must be positive");
  require(kernel_fraction > 0.0 && kernel_fraction <= 1.0,
          "gaussian_blur: kernel fraction must lie in (0,1]");
  if (probability <= 0.0 || !rng.bernoulli(probability)) return image;
  return blur_with_sigma(image, rng.uniform(sigma.lo, sigma.hi), kernel_fraction);
}

Image rotate_by(const Image& image, double degrees) {
  check_image(image, "rotate");
  if (degrees == 0.0) return image;
  double cs = std::cos(degrees * std::numbers::pi / 180.0);
  double sn = std::sin(degrees * std::numbers::pi / 180.0);
  const double quarter = degrees / 90.0;
  if (quarter == std::round(quarter)) {
    const long q = ((static_cast<long>(std::round(quarter)) % 4) + 4) % 4;
    constexpr std::array<double, 4> kCos{1.0, 0.0, -1.0, 0.0};
    constexpr std::array<double, 4> kSin{0.0, 1.0, 0.0, -1.0};
    cs = kCos[static_cast<std::size_t>(q)];
    sn = kSin[static_cast<std::size_t>(q)];
  }
  const double cy = (image.height - 1) / 2.0, cx = (image.width - 1) / 2.0;
  Image out(image.height, image.width, image.channels);
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) {
        const double dy = y - cy, dx = x - cx;
        const double src_x = cx + cs * dx - sn * dy;
        const double src_y = cy + sn * dx + cs * dy;
        out.at(c, y, x) = bilinear(image, c, src_y, src_x, true);
      }
  clamp_unit(out);
  return out;
}

Image rotate(const Image& image, Rng& rng, double range_degrees) {
  require(range_degrees >= 0.0, "rotate: range must be symmetric about 0");
  if (range_degrees == 0.0) return image;
  return rotate_by(image, rng.uniform(-range_degrees, range_degrees));
}

Image histogram_equalize(const Image& image) {
  check_image(image, "histogram_equalize");
  const std::size_t plane = image.plane();
  std::vector<double> lum(plane);
  std::vector<int> bin(plane);
  std::array<double, 256> cdf{};
  for (std::size_t i = 0; i < plane; ++i) {
    lum[i] = luminance(image, i);
    bin[i] = std::clamp(static_cast<int>(std::floor(lum[i] * 256.0)), 0, 255);
    cdf[static_cast<std::size_t>(bin[i])] += 1.0;
  }
  double running = 0.0;
  double cdf_min = 0.0;
  for (double& v : cdf) {
    running += v;
    v = running / static_cast<double>(plane);
    if (cdf_min == 0.0 && v > 0.0) cdf_min = v;
  }
  if (cdf_min >= 1.0) return image;  // constant image
  Image out = image;
  for (std::size_t i = 0; i < plane; ++i) {
    const double mapped = (cdf[static_cast<std::size_t>(bin[i])] - cdf_min) / (1.0 - cdf_min);
    if (image.channels == 1) {
      out.pixels[i] = mapped;
    } else {
      for (int c = 0; c < 3; ++c) out.pixels[c * plane + i] += mapped - lum[i];
    }
  }
  clamp_unit(out);
  return out;
}

Image elastic_deform(const Image& image, Rng& rng, double alpha, double sigma) {
  check_image(image, "elastic_deform");
  require(alpha >= 0.0, "elastic_deform: alpha must be >= 0");
  require(sigma > 0.0, "elastic_deform: sigma must be positive");
  if (alpha == 0.0) return image;
  Image dy(image.height, image.width, 1), dx(image.height, image.width, 1);
  for (double& v : dy.pixels) v = rng.uniform(-1.0, 1.0);
  for (double& v : dx.pixels) v = rng.uniform(-1.0, 1.0);
  const auto kernel = gaussian_kernel(2 * static_cast<int>(std::ceil(3.0 * sigma)) + 1, sigma);
  dy = convolve_axis(convolve_axis(dy, kernel, false), kernel, true);
  dx = convolve_axis(convolve_axis(dx, kernel, false), kernel, true);
  Image out(image.height, image.width, image.channels);
  for (int c = 0; c < image.channels; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) {
        out.at(c, y, x) = bilinear(image, c, y + alpha * dy.at(0, y, x),
                                   x + alpha * dx.at(0, y, x), false);
      }
  clamp_unit(out);
  return out;
}

Image apply_policy(const Image& image, const AugmentPolicy& policy, Rng& rng) {
  const int out_h = policy.out_height > 0 ? policy.out_height : image.height;
  const int out_w = policy.out_width > 0 ? policy.out_width : image.width;
  Image out;
  if (policy.crop) {
    out = random_crop_resize(image, rng, policy.crop_area, policy.crop_aspect, out_h, out_w);
  } else if (out_h != image.height || out_w != image.width) {
    out = crop_resize(image, Box{0.0, 0.0, double(image.height), double(image.width)}, out_h,
                      out_w);
  } else {
    out = image;
  }
  if (policy.flip_probability > 0.0 && rng.bernoulli(policy.flip_probability)) {
    out = flip_horizontal(out);
  }
  if (policy.rotate) out = rotate(out, rng, policy.rotation_degrees);
  if (policy.elastic) out = elastic_deform(out, rng, policy.elastic_alpha, policy.elastic_sigma);
  if (policy.equalize) out = histogram_equalize(out);
  if (policy.color && policy.color_probability > 0.0 && rng.bernoulli(policy.color_probability)) {
    out = color_distort(out, rng, policy.color_strength);
  }
  if (policy.blur) {
    out = gaussian_blur(out, rng, policy.blur_sigma, policy.blur_kernel_fraction,
                        policy.blur_probability);
  }
  return out;
}

ViewPair make_view_pair(std::span<const Image> views, const AugmentPolicy& policy, Rng& rng) {
  if (views.empty()) fail(ErrorCode::kInvalidArgument, "make_view_pair: record has no images");
  ViewPair pair;
  pair.view_index = views.size() > 1 ? rng.index(views.size()) : 0;
  Rng first(rng.next());
  Rng second(rng.next());
  pair.first = apply_policy(views[pair.view_index], policy, first);
  pair.second = apply_policy(views[pair.view_index], policy, second);
  return pair;
}

}  // namespace remedis::augment
