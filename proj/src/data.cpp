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

#include "remedis/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "remedis/augment.hpp"
#include "remedis/error.hpp"
#include "remedis/hash.hpp"
#include "remedis/rng.hpp"

namespace remedis::data {
namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "bundle pixels are stored little-endian");

constexpr int kSchemaVersion = 1;

// Stream tags keep label, render and shift draws independent.
enum Stream : std::uint64_t { kLabel = 1, kRender = 2, kShift = 3, kNoise = 4, kSubsample = 5 };

enum Domain : std::uint64_t { kUnlabeled = 0, kIn = 1, kOut = 2, kUpstream = 3 };

double smoothstep(double edge, double x) {
  // 1 inside (x < edge - 0.5), 0 outside (x > edge + 0.5).
  return std::clamp(edge + 0.5 - x, 0.0, 1.0);
}

// Pattern intensity in [0,1] at pixel (y, x) for a shape centred at
// (cy, cx) with radius r and orientation theta.
double shape_value(int pattern, double y, double x, double cy, double cx, double r,
                   double theta) {
  const double dy = y - cy, dx = x - cx;
  const double u = std::cos(theta) * dx + std::sin(theta) * dy;
  const double v = -std::sin(theta) * dx + std::cos(theta) * dy;
  const double dist = std::hypot(dy, dx);
  const double thick = std::max(1.0, 0.25 * r);
  switch (pattern) {
    case 0:  // disc
      return smoothstep(r, dist);
    case 1:  // ring
      return smoothstep(thick * 0.5, std::abs(dist - r * 0.85));
    case 2: {  // stripes inside the disc
      const double period = std::max(3.0, 0.6 * r);
      const double phase = std::fmod(std::abs(u) + period * 0.25, period) / period;
      return smoothstep(r, dist) * (phase < 0.5 ? 1.0 : 0.0);
    }
    case 3:  // cross
      return std::max(smoothstep(thick * 0.5, std::abs(u)) * smoothstep(r, std::abs(v)),
                      smoothstep(thick * 0.5, std::abs(v)) * smoothstep(r, std::abs(u)));
    case 4: {  // square outline
      const double m = std::max(std::abs(u), std::abs(v));
      return smoothstep(thick * 0.5, std::abs(m - r * 0.8));
    }
    case 5:  // horizontal bar
      return smoothstep(thick, std::abs(v)) * smoothstep(r, std::abs(u));
    case 6: {  // triangle
      const double h = r * 0.9;
      const double inside = v < h && v > -h * 0.5 && std::abs(u) < (h - v) / std::sqrt(3.0);
      return inside ? 1.0 : 0.0;
    }
    default: {  // dot grid
      const double period = std::max(4.0, 0.7 * r);
      const double gy = std::fmod(std::abs(v), period) - period / 2;
      const double gx = std::fmod(std::abs(u), period) - period / 2;
      return smoothstep(r, dist) * smoothstep(period * 0.25, std::hypot(gy, gx));
    }
  }
}

constexpr int kPatternFamilies = 8;

// Downstream classes use the first families; the upstream proxy task starts
// from a different offset so its label space is distinct.
int downstream_pattern(int label) { return label % kPatternFamilies; }
int upstream_pattern(int label) { return (label + 2) % kPatternFamilies; }

std::size_t sample_index(const std::vector<double>& weights, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  return weights.size() - 1;
}

void check_distribution(const std::vector<double>& p, std::size_t size, const char* what) {
  if (p.empty()) return;
  require(p.size() == size, std::string(what) + ": expected " + std::to_string(size) + " entries");
  double total = 0.0;
  for (double v : p) {
    require(v >= 0.0, std::string(what) + ": negative weight");
    total += v;
  }
  require(std::abs(total - 1.0) < 1e-9, std::string(what) + ": weights must sum to 1");
}

std::vector<double> uniform_weights(std::size_t n) { return std::vector<double>(n, 1.0 / n); }

struct DomainSpec {
  Domain domain;
  const char* split;
  std::size_t count;
  int num_classes;
  std::vector<double> prevalence;
  std::vector<double> subgroups;
  bool labeled;
  bool upstream;
  const TechnologyShift* technology;
};

Record make_record(std::uint64_t seed, std::uint64_t id, const BaseSpec& base,
                   const DomainSpec& d) {
  Record rec;
  rec.id = id;
  Rng label_rng(derive_seed({seed, id, kLabel}));
  const int label = static_cast<int>(sample_index(d.prevalence, label_rng));
  rec.subgroup = static_cast<int>(sample_index(d.subgroups, label_rng));
  int shown = label;
  const double ambiguity = d.upstream ? 0.0 : base.subgroup_ambiguity[static_cast<std::size_t>(rec.subgroup)];
  if (ambiguity > 0.0 && label_rng.bernoulli(ambiguity)) {
    shown = (label + 1 + static_cast<int>(label_rng.index(static_cast<std::size_t>(d.num_classes - 1)))) %
            d.num_classes;
  }
  rec.label = d.labeled ? label : -1;
  rec.pattern = shown;
  const int family = d.upstream ? upstream_pattern(shown) : downstream_pattern(shown);
  const double amp_scale = d.upstream ? 1.0 : base.subgroup_amplitude[static_cast<std::size_t>(rec.subgroup)];
  Rng render_rng(derive_seed({seed, id, kRender}));
  rec.signal = base.amplitude * amp_scale * render_rng.uniform(0.8, 1.2);
  for (int v = 0; v < base.views_per_record; ++v) {
    const double background = render_rng.uniform(base.background_lo, base.background_hi);
    Image img = render_pattern(family, base.image_size, rec.signal, background, base.texture_noise,
                               render_rng.next());
    if (d.technology) apply_technology_shift(img, *d.technology, derive_seed({seed, id, kShift, std::uint64_t(v)}));
    rec.views.push_back(std::move(img));
  }
  return rec;
}

void flip_labels(Dataset& records, double rate, int num_classes, std::uint64_t seed) {
  const auto flips = static_cast<std::size_t>(std::llround(rate * static_cast<double>(records.size())));
  if (flips == 0) return;
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng.engine());
  for (std::size_t i = 0; i < flips; ++i) {
    Record& r = records[order[i]];
    r.label = (r.label + 1) % num_classes;
  }
}

json sizes_json(const SplitSizes& s) {
  return json{{"train", s.train}, {"validation", s.validation}, {"test", s.test}};
}

SplitSizes sizes_from(const json& j) {
  return SplitSizes{j.at("train").get<std::size_t>(), j.at("validation").get<std::size_t>(),
                    j.at("test").get<std::size_t>()};
}

json shift_json(const ShiftSpec& s) {
  return json{{"technology",
               {{"intensity_offset", s.technology.intensity_offset},
                {"contrast", s.technology.contrast},
                {"blur_sigma", s.technology.blur_sigma},
                {"noise_std", s.technology.noise_std}}},
              {"population",
               {{"class_prevalence", s.population.class_prevalence},
                {"subgroup_weights", s.population.subgroup_weights}}},
              {"behavior", {{"label_noise_rate", s.behavior.label_noise_rate}}}};
}

json base_json(const BaseSpec& b) {
  return json{{"image_size", b.image_size},
              {"num_classes", b.num_classes},
              {"views_per_record", b.views_per_record},
              {"background_lo", b.background_lo},
              {"background_hi", b.background_hi},
              {"amplitude", b.amplitude},
              {"texture_noise", b.texture_noise},
              {"class_prevalence", b.class_prevalence},
              {"subgroup_weights", b.subgroup_weights},
              {"subgroup_amplitude", b.subgroup_amplitude},
              {"subgroup_ambiguity", b.subgroup_ambiguity},
              {"unlabeled", b.unlabeled},
              {"in_sizes", sizes_json(b.in_sizes)},
              {"out_sizes", sizes_json(b.out_sizes)},
              {"upstream_classes", b.upstream_classes},
              {"upstream_sizes", sizes_json(b.upstream_sizes)}};
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

struct NamedSplit {
  const char* domain;
  const char* split;
  const Dataset* records;
};

std::vector<NamedSplit> named_splits(const TaskBundle& b) {
  return {{"unlabeled", "train", &b.unlabeled},      {"in", "train", &b.in.train},
          {"in", "validation", &b.in.validation},    {"in", "test", &b.in.test},
          {"out", "train", &b.out.train},            {"out", "validation", &b.out.validation},
          {"out", "test", &b.out.test},              {"upstream", "train", &b.upstream.train},
          {"upstream", "validation", &b.upstream.validation},
          {"upstream", "test", &b.upstream.test}};
}

Dataset* split_slot(TaskBundle& b, const std::string& domain, const std::string& split) {
  Splits* s = nullptr;
  if (domain == "unlabeled") return &b.unlabeled;
  if (domain == "in") s = &b.in;
  if (domain == "out") s = &b.out;
  if (domain == "upstream") s = &b.upstream;
  if (!s) fail(ErrorCode::kIo, "bundle index: unknown domain '" + domain + "'");
  if (split == "train") return &s->train;
  if (split == "validation") return &s->validation;
  if (split == "test") return &s->test;
  fail(ErrorCode::kIo, "bundle index: unknown split '" + split + "'");
}

void serialize_records(const TaskBundle& b, std::string& index, std::string& pixels) {
  std::ostringstream idx;
  idx << "id,domain,split,label,pattern,subgroup,signal,views\n";
  idx.precision(17);
  for (const auto& ns : named_splits(b)) {
    for (const Record& r : *ns.records) {
      idx << r.id << ',' << ns.domain << ',' << ns.split << ',' << r.label << ',' << r.pattern << ','
          << r.subgroup << ',' << r.signal << ',' << r.views.size() << '\n';
      for (const Image& v : r.views) {
        pixels.append(reinterpret_cast<const char*>(v.pixels.data()), v.pixels.size() * sizeof(double));
      }
    }
  }
  index = idx.str();
}

}  // namespace

void ShiftSpec::validate(int num_classes, int num_subgroups) const {
  require(technology.contrast > 0.0, "shift spec: contrast must be positive");
  require(technology.blur_sigma >= 0.0, "shift spec: blur sigma must be >= 0");
  require(technology.noise_std >= 0.0, "shift spec: noise std must be >= 0");
  check_distribution(population.class_prevalence, static_cast<std::size_t>(num_classes),
                     "shift spec class_prevalence");
  check_distribution(population.subgroup_weights, static_cast<std::size_t>(num_subgroups),
                     "shift spec subgroup_weights");
  require(behavior.label_noise_rate >= 0.0 && behavior.label_noise_rate < 0.5,
          "shift spec: label noise rate must lie in [0, 0.5)");
}

std::string ShiftSpec::to_json() const { return shift_json(*this).dump(); }

ShiftSpec ShiftSpec::from_json(const std::string& text) {
  const json j = json::parse(text);
  ShiftSpec s;
  if (j.contains("technology")) {
    const json& t = j.at("technology");
    read_if(t, "intensity_offset", s.technology.intensity_offset);
    read_if(t, "contrast", s.technology.contrast);
    read_if(t, "blur_sigma", s.technology.blur_sigma);
    read_if(t, "noise_std", s.technology.noise_std);
  }
  if (j.contains("population")) {
    read_if(j.at("population"), "class_prevalence", s.population.class_prevalence);
    read_if(j.at("population"), "subgroup_weights", s.population.subgroup_weights);
  }
  if (j.contains("behavior")) read_if(j.at("behavior"), "label_noise_rate", s.behavior.label_noise_rate);
  return s;
}

std::string ShiftSpec::hash() const { return git_blob_hash(to_json()); }

void BaseSpec::validate() const {
  require(image_size >= 8, "base spec: image_size must be >= 8");
  if (num_classes < 2) fail(ErrorCode::kInvalidArgument, "base spec: need at least 2 classes");
  require(num_classes <= kPatternFamilies, "base spec: at most 8 classes");
  require(upstream_classes >= 2 && upstream_classes <= kPatternFamilies,
          "base spec: upstream classes must lie in [2, 8]");
  require(views_per_record >= 1, "base spec: views_per_record must be >= 1");
  require(background_lo >= 0.0 && background_lo <= background_hi && background_hi <= 1.0,
          "base spec: background range must lie in [0,1]");
  require(amplitude > 0.0 && texture_noise >= 0.0, "base spec: amplitude > 0, noise >= 0");
  check_distribution(class_prevalence, static_cast<std::size_t>(num_classes), "base spec class_prevalence");
  require(!subgroup_weights.empty(), "base spec: need at least one subgroup");
  check_distribution(subgroup_weights, subgroup_weights.size(), "base spec subgroup_weights");
  require(subgroup_amplitude.size() == subgroup_weights.size() &&
              subgroup_ambiguity.size() == subgroup_weights.size(),
          "base spec: per-subgroup vectors must match subgroup_weights");
  for (double a : subgroup_ambiguity) require(a >= 0.0 && a <= 1.0, "base spec: ambiguity in [0,1]");
  for (double a : subgroup_amplitude) require(a > 0.0, "base spec: subgroup amplitude must be > 0");
}

std::string BaseSpec::to_json() const { return base_json(*this).dump(); }

BaseSpec BaseSpec::from_json(const std::string& text) {
  const json j = json::parse(text);
  BaseSpec b;
  read_if(j, "image_size", b.image_size);
  read_if(j, "num_classes", b.num_classes);
  read_if(j, "views_per_record", b.views_per_record);
  read_if(j, "background_lo", b.background_lo);
  read_if(j, "background_hi", b.background_hi);
  read_if(j, "amplitude", b.amplitude);
  read_if(j, "texture_noise", b.texture_noise);
  read_if(j, "class_prevalence", b.class_prevalence);
  read_if(j, "subgroup_weights", b.subgroup_weights);
  read_if(j, "subgroup_amplitude", b.subgroup_amplitude);
  read_if(j, "subgroup_ambiguity", b.subgroup_ambiguity);
  read_if(j, "unlabeled", b.unlabeled);
  read_if(j, "upstream_classes", b.upstream_classes);
  if (j.contains("in_sizes")) b.in_sizes = sizes_from(j.at("in_sizes"));
  if (j.contains("out_sizes")) b.out_sizes = sizes_from(j.at("out_sizes"));
  if (j.contains("upstream_sizes")) b.upstream_sizes = sizes_from(j.at("upstream_sizes"));
  return b;
}

Image render_pattern(int pattern, int size, double amplitude, double background, double noise,
                     std::uint64_t seed) {
  Rng rng(seed);
  const double s = size;
  const double cy = (s - 1) / 2 + rng.uniform(-0.12, 0.12) * s;
  const double cx = (s - 1) / 2 + rng.uniform(-0.12, 0.12) * s;
  const double r = rng.uniform(0.22, 0.32) * s;
  const double theta = rng.uniform(0.0, std::numbers::pi);
  // Gentle illumination gradient as a nuisance factor.
  const double gy = rng.uniform(-0.03, 0.03), gx = rng.uniform(-0.03, 0.03);
  Image img(size, size, 1);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double base = background + gy * (y - cy) / s * 2 + gx * (x - cx) / s * 2;
      img.at(0, y, x) = base + amplitude * shape_value(pattern, y, x, cy, cx, r, theta) +
                        (noise > 0.0 ? rng.normal(0.0, noise) : 0.0);
    }
  clamp_unit(img);
  return img;
}

void apply_technology_shift(Image& image, const TechnologyShift& shift, std::uint64_t seed) {
  if (shift.contrast != 1.0 || shift.intensity_offset != 0.0) {
    for (double& p : image.pixels) p = (p - 0.5) * shift.contrast + 0.5 + shift.intensity_offset;
  }
  clamp_unit(image);
  if (shift.blur_sigma > 0.0) {
    const int k = 2 * static_cast<int>(std::ceil(2.0 * shift.blur_sigma)) + 1;
    image = augment::blur_separable(image, shift.blur_sigma, k, k);
  }
  if (shift.noise_std > 0.0) {
    Rng rng(seed);
    for (double& p : image.pixels) p += rng.normal(0.0, shift.noise_std);
    clamp_unit(image);
  }
}

TaskBundle generate_task(std::uint64_t seed, const BaseSpec& base, const ShiftSpec& shift) {
  base.validate();
  const int groups = static_cast<int>(base.subgroup_weights.size());
  shift.validate(base.num_classes, groups);
  TaskBundle b;
  b.seed = seed;
  b.base = base;
  b.shift = shift;
  const std::vector<double> prevalence =
      base.class_prevalence.empty() ? uniform_weights(base.num_classes) : base.class_prevalence;
  const std::vector<double> out_prevalence =
      shift.population.class_prevalence.empty() ? prevalence : shift.population.class_prevalence;
  const std::vector<double> out_groups =
      shift.population.subgroup_weights.empty() ? base.subgroup_weights : shift.population.subgroup_weights;
  const bool shifted = shift.technology.contrast != 1.0 || shift.technology.intensity_offset != 0.0 ||
                       shift.technology.blur_sigma > 0.0 || shift.technology.noise_std > 0.0;
  const TechnologyShift* tech = shifted ? &shift.technology : nullptr;
  const auto up_prev = uniform_weights(static_cast<std::size_t>(base.upstream_classes));
  const std::vector<double> one_group{1.0};

  const std::vector<std::pair<Dataset*, DomainSpec>> plan{
      {&b.unlabeled, {kUnlabeled, "train", base.unlabeled, base.num_classes, prevalence, base.subgroup_weights, false, false, nullptr}},
      {&b.in.train, {kIn, "train", base.in_sizes.train, base.num_classes, prevalence, base.subgroup_weights, true, false, nullptr}},
      {&b.in.validation, {kIn, "validation", base.in_sizes.validation, base.num_classes, prevalence, base.subgroup_weights, true, false, nullptr}},
      {&b.in.test, {kIn, "test", base.in_sizes.test, base.num_classes, prevalence, base.subgroup_weights, true, false, nullptr}},
      {&b.out.train, {kOut, "train", base.out_sizes.train, base.num_classes, out_prevalence, out_groups, true, false, tech}},
      {&b.out.validation, {kOut, "validation", base.out_sizes.validation, base.num_classes, out_prevalence, out_groups, true, false, tech}},
      {&b.out.test, {kOut, "test", base.out_sizes.test, base.num_classes, out_prevalence, out_groups, true, false, tech}},
      {&b.upstream.train, {kUpstream, "train", base.upstream_sizes.train, base.upstream_classes, up_prev, one_group, true, true, nullptr}},
      {&b.upstream.validation, {kUpstream, "validation", base.upstream_sizes.validation, base.upstream_classes, up_prev, one_group, true, true, nullptr}},
      {&b.upstream.test, {kUpstream, "test", base.upstream_sizes.test, base.upstream_classes, up_prev, one_group, true, true, nullptr}},
  };
  std::uint64_t next_id = 1;
  for (const auto& [slot, spec] : plan) {
    slot->reserve(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) slot->push_back(make_record(seed, next_id++, base, spec));
  }
  if (shift.behavior.label_noise_rate > 0.0) {
    flip_labels(b.out.train, shift.behavior.label_noise_rate, base.num_classes, derive_seed({seed, kNoise, 0}));
    flip_labels(b.out.validation, shift.behavior.label_noise_rate, base.num_classes, derive_seed({seed, kNoise, 1}));
    flip_labels(b.out.test, shift.behavior.label_noise_rate, base.num_classes, derive_seed({seed, kNoise, 2}));
  }
  return b;
}

std::vector<std::size_t> subsample_fraction(const Dataset& split, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    fail(ErrorCode::kInvalidArgument, "subsample_fraction: fraction must lie in [0,1]");
  }
  if (fraction == 0.0) return {};
  if (split.empty()) fail(ErrorCode::kInvalidArgument, "subsample_fraction: empty split");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < split.size(); ++i) by_class[split[i].label].push_back(i);
  std::vector<std::size_t> out;
  for (auto& [label, members] : by_class) {
    // Same permutation for every fraction, so smaller subsets are prefixes.
    Rng rng(derive_seed({seed, kSubsample, static_cast<std::uint64_t>(label + 1)}));
    std::shuffle(members.begin(), members.end(), rng.engine());
    const double want = std::round(fraction * static_cast<double>(members.size()));
    const std::size_t take = std::max<std::size_t>(1, static_cast<std::size_t>(want));
    out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(out.begin(), out.end());
  return out;
}

SplitFingerprint fingerprint_split(const std::string& name, const Dataset& records) {
  SplitFingerprint f;
  f.name = name;
  f.count = records.size();
  std::vector<const Record*> sorted;
  for (const Record& r : records) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](const Record* a, const Record* b) { return a->id < b->id; });
  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  for (const Record* r : sorted) {
    ++f.class_histogram[r->label];
    ++f.subgroup_histogram[r->subgroup];
    for (const Image& v : r->views)
      for (double p : v.pixels) {
        sum += p;
        sum_sq += p * p;
        ++n;
      }
  }
  if (n > 0) {
    f.pixel_mean = sum / static_cast<double>(n);
    f.pixel_variance = std::max(0.0, sum_sq / static_cast<double>(n) - f.pixel_mean * f.pixel_mean);
  }
  return f;
}

DatasetFingerprint fingerprint(const TaskBundle& bundle) {
  DatasetFingerprint fp;
  fp.shift_hash = bundle.shift.hash();
  for (const auto& ns : named_splits(bundle)) {
    if (ns.records->empty()) continue;
    fp.splits.push_back(fingerprint_split(std::string(ns.domain) + "." + ns.split, *ns.records));
  }
  return fp;
}

std::string DatasetFingerprint::to_json() const {
  json splits_json = json::array();
  for (const auto& s : splits) {
    json classes = json::object(), groups = json::object();
    for (const auto& [k, v] : s.class_histogram) classes[std::to_string(k)] = v;
    for (const auto& [k, v] : s.subgroup_histogram) groups[std::to_string(k)] = v;
    splits_json.push_back({{"name", s.name},
                           {"count", s.count},
                           {"class_histogram", classes},
                           {"subgroup_histogram", groups},
                           {"pixel_mean", s.pixel_mean},
                           {"pixel_variance", s.pixel_variance}});
  }
  return json{{"schema_version", kSchemaVersion}, {"shift_hash", shift_hash}, {"splits", splits_json}}.dump(2);
}

std::string DatasetFingerprint::hash() const { return git_blob_hash(to_json()); }

const SplitFingerprint& DatasetFingerprint::split(const std::string& name) const {
  for (const auto& s : splits)
    if (s.name == name) return s;
  fail(ErrorCode::kInvalidArgument, "fingerprint: no split '" + name + "'");
}

void save_bundle(const TaskBundle& bundle, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "save_bundle: cannot create " + dir.string());
  std::string index, pixels;
  serialize_records(bundle, index, pixels);
  const json meta{{"schema_version", kSchemaVersion},
                  {"seed", bundle.seed},
                  {"base", base_json(bundle.base)},
                  {"shift", shift_json(bundle.shift)},
                  {"content_hash", git_blob_hash(index + pixels)}};
  auto write = [&](const char* name, const std::string& bytes) {
    std::ofstream out(dir / name, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::kIo, std::string("save_bundle: cannot write ") + name);
  };
  write("bundle.json", meta.dump(2) + "\n");
  write("index.csv", index);
  write("pixels.bin", pixels);
  write("fingerprint.json", fingerprint(bundle).to_json() + "\n");
}

TaskBundle load_bundle(const std::filesystem::path& dir) {
  auto read = [&](const char* name) {
    std::ifstream in(dir / name, std::ios::binary);
    if (!in) fail(ErrorCode::kIo, "load_bundle: cannot open " + (dir / name).string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  const json meta = json::parse(read("bundle.json"));
  if (meta.at("schema_version").get<int>() != kSchemaVersion) {
    fail(ErrorCode::kIo, "load_bundle: unsupported schema version");
  }
  TaskBundle b;
  b.seed = meta.at("seed").get<std::uint64_t>();
  b.base = BaseSpec::from_json(meta.at("base").dump());
  b.shift = ShiftSpec::from_json(meta.at("shift").dump());
  const std::string pixels = read("pixels.bin");
  std::istringstream index(read("index.csv"));
  std::string line;
  std::getline(index, line);
  const std::size_t plane = static_cast<std::size_t>(b.base.image_size) * b.base.image_size;
  std::size_t offset = 0;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    if (cols.size() != 8) fail(ErrorCode::kIo, "load_bundle: malformed index row '" + line + "'");
    Record r;
    r.id = std::stoull(cols[0]);
    r.label = std::stoi(cols[3]);
    r.pattern = std::stoi(cols[4]);
    r.subgroup = std::stoi(cols[5]);
    r.signal = std::stod(cols[6]);
    const auto views = std::stoul(cols[7]);
    for (std::size_t v = 0; v < views; ++v) {
      if (offset + plane * sizeof(double) > pixels.size()) fail(ErrorCode::kIo, "load_bundle: pixels truncated");
      Image img(b.base.image_size, b.base.image_size, 1);
      std::memcpy(img.pixels.data(), pixels.data() + offset, plane * sizeof(double));
      offset += plane * sizeof(double);
      r.views.push_back(std::move(img));
    }
    split_slot(b, cols[1], cols[2])->push_back(std::move(r));
  }
  if (offset != pixels.size()) fail(ErrorCode::kIo, "load_bundle: trailing pixel data");
  if (bundle_hash(b) != meta.at("content_hash").get<std::string>()) {
    fail(ErrorCode::kIo, "load_bundle: content hash mismatch");
  }
  return b;
}

std::string bundle_hash(const TaskBundle& bundle) {
  std::string index, pixels;
  serialize_records(bundle, index, pixels);
  return git_blob_hash(index + pixels);
}

}  // namespace remedis::data
