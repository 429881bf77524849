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

#include "remedis/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "remedis/error.hpp"
#include "remedis/hash.hpp"
#include "remedis/optim.hpp"

namespace remedis::config {
namespace {

using json = nlohmann::ordered_json;

[[noreturn]] void bad(const std::string& path, const std::string& what) {
  fail(ErrorCode::kInvalidArgument, "config " + (path.empty() ? std::string("root") : path) + ": " + what);
}

void expect_object(const json& j, const std::string& path) {
  if (!j.is_object()) bad(path, "expected an object");
}

void allow_keys(const json& j, const std::string& path, std::initializer_list<const char*> keys) {
  expect_object(j, path);
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, _] : j.items()) {
    if (!allowed.contains(k)) bad(path, "unknown key '" + k + "'");
  }
}

std::string child(const std::string& path, const char* key) { return path.empty() ? key : path + "." + key; }

template <typename T>
void read(const json& j, const std::string& path, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    bad(child(path, key), "wrong type");
  }
}

void read_range(const json& j, const std::string& path, const char* key, augment::Range& r) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
    bad(child(path, key), "expected [lo, hi]");
  }
  r = {v[0].get<double>(), v[1].get<double>()};
}

template <typename Enum, typename Parse>
void read_enum(const json& j, const std::string& path, const char* key, Enum& out, Parse parse) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_string()) bad(child(path, key), "expected a string");
  try {
    out = parse(j.at(key).get<std::string>());
  } catch (const Error& e) {
    bad(child(path, key), e.what());
  }
}

// ---- sections

json augment_json(const augment::AugmentPolicy& p) {
  return json{{"crop", p.crop},
              {"crop_area", {p.crop_area.lo, p.crop_area.hi}},
              {"crop_aspect", {p.crop_aspect.lo, p.crop_aspect.hi}},
              {"flip_probability", p.flip_probability},
              {"color", p.color},
              {"color_strength", p.color_strength},
              {"color_probability", p.color_probability},
              {"rotate", p.rotate},
              {"rotation_degrees", p.rotation_degrees},
              {"blur", p.blur},
              {"blur_sigma", {p.blur_sigma.lo, p.blur_sigma.hi}},
              {"blur_kernel_fraction", p.blur_kernel_fraction},
              {"blur_probability", p.blur_probability},
              {"equalize", p.equalize},
              {"elastic", p.elastic},
              {"elastic_alpha", p.elastic_alpha},
              {"elastic_sigma", p.elastic_sigma},
              {"out_height", p.out_height},
              {"out_width", p.out_width}};
}

void parse_augment(const json& j, const std::string& path, augment::AugmentPolicy& p) {
  allow_keys(j, path, {"crop", "crop_area", "crop_aspect", "flip_probability", "color", "color_strength",
                       "color_probability", "rotate", "rotation_degrees", "blur", "blur_sigma",
                       "blur_kernel_fraction", "blur_probability", "equalize", "elastic", "elastic_alpha",
                       "elastic_sigma", "out_height", "out_width"});
  read(j, path, "crop", p.crop);
  read_range(j, path, "crop_area", p.crop_area);
  read_range(j, path, "crop_aspect", p.crop_aspect);
  read(j, path, "flip_probability", p.flip_probability);
  read(j, path, "color", p.color);
  read(j, path, "color_strength", p.color_strength);
  read(j, path, "color_probability", p.color_probability);
  read(j, path, "rotate", p.rotate);
  read(j, path, "rotation_degrees", p.rotation_degrees);
  read(j, path, "blur", p.blur);
  read_range(j, path, "blur_sigma", p.blur_sigma);
  read(j, path, "blur_kernel_fraction", p.blur_kernel_fraction);
  read(j, path, "blur_probability", p.blur_probability);
  read(j, path, "equalize", p.equalize);
  read(j, path, "elastic", p.elastic);
  read(j, path, "elastic_alpha", p.elastic_alpha);
  read(j, path, "elastic_sigma", p.elastic_sigma);
  read(j, path, "out_height", p.out_height);
  read(j, path, "out_width", p.out_width);
}

json optimizer_json(const optim::OptimizerConfig& o) {
  return json{{"kind", optim::optimizer_name(o.kind)}, {"weight_decay", o.weight_decay},
              {"momentum", o.momentum},                {"trust_coefficient", o.trust_coefficient},
              {"beta1", o.beta1},                      {"beta2", o.beta2},
              {"epsilon", o.epsilon}};
}

void parse_optimizer(const json& j, const std::string& path, optim::OptimizerConfig& o) {
  allow_keys(j, path, {"kind", "weight_decay", "momentum", "trust_coefficient", "beta1", "beta2", "epsilon"});
  read_enum(j, path, "kind", o.kind, optim::parse_optimizer);
  read(j, path, "weight_decay", o.weight_decay);
  read(j, path, "momentum", o.momentum);
  read(j, path, "trust_coefficient", o.trust_coefficient);
  read(j, path, "beta1", o.beta1);
  read(j, path, "beta2", o.beta2);
  read(j, path, "epsilon", o.epsilon);
}

json sizes_json(const data::SplitSizes& s) {
  return json{{"train", s.train}, {"validation", s.validation}, {"test", s.test}};
}

void parse_sizes(const json& j, const std::string& path, data::SplitSizes& s) {
  allow_keys(j, path, {"train", "validation", "test"});
  read(j, path, "train", s.train);
  read(j, path, "validation", s.validation);
  read(j, path, "test", s.test);
}

json base_json(const data::BaseSpec& b) {
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

void parse_base(const json& j, const std::string& path, data::BaseSpec& b) {
  allow_keys(j, path, {"image_size", "num_classes", "views_per_record", "background_lo", "background_hi",
                       "amplitude", "texture_noise", "class_prevalence", "subgroup_weights",
                       "subgroup_amplitude", "subgroup_ambiguity", "unlabeled", "in_sizes", "out_sizes",
                       "upstream_classes", "upstream_sizes"});
  read(j, path, "image_size", b.image_size);
  read(j, path, "num_classes", b.num_classes);
  read(j, path, "views_per_record", b.views_per_record);
  read(j, path, "background_lo", b.background_lo);
  read(j, path, "background_hi", b.background_hi);
  read(j, path, "amplitude", b.amplitude);
  read(j, path, "texture_noise", b.texture_noise);
  read(j, path, "class_prevalence", b.class_prevalence);
  read(j, path, "subgroup_weights", b.subgroup_weights);
  read(j, path, "subgroup_amplitude", b.subgroup_amplitude);
  read(j, path, "subgroup_ambiguity", b.subgroup_ambiguity);
  read(j, path, "unlabeled", b.unlabeled);
  read(j, path, "upstream_classes", b.upstream_classes);
  if (j.contains("in_sizes")) parse_sizes(j.at("in_sizes"), child(path, "in_sizes"), b.in_sizes);
  if (j.contains("out_sizes")) parse_sizes(j.at("out_sizes"), child(path, "out_sizes"), b.out_sizes);
  if (j.contains("upstream_sizes")) {
    parse_sizes(j.at("upstream_sizes"), child(path, "upstream_sizes"), b.upstream_sizes);
  }
}

json shift_json(const data::ShiftSpec& s) {
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

void parse_shift(const json& j, const std::string& path, data::ShiftSpec& s) {
  allow_keys(j, path, {"technology", "population", "behavior"});
  if (j.contains("technology")) {
    const std::string p = child(path, "technology");
    const json& t = j.at("technology");
    allow_keys(t, p, {"intensity_offset", "contrast", "blur_sigma", "noise_std"});
    read(t, p, "intensity_offset", s.technology.intensity_offset);
    read(t, p, "contrast", s.technology.contrast);
    read(t, p, "blur_sigma", s.technology.blur_sigma);
    read(t, p, "noise_std", s.technology.noise_std);
  }
  if (j.contains("population")) {
    const std::string p = child(path, "population");
    const json& t = j.at("population");
    allow_keys(t, p, {"class_prevalence", "subgroup_weights"});
    read(t, p, "class_prevalence", s.population.class_prevalence);
    read(t, p, "subgroup_weights", s.population.subgroup_weights);
  }
  if (j.contains("behavior")) {
    const std::string p = child(path, "behavior");
    allow_keys(j.at("behavior"), p, {"label_noise_rate"});
    read(j.at("behavior"), p, "label_noise_rate", s.behavior.label_noise_rate);
  }
}

json grid_json(const std::vector<pipeline::GridPoint>& grid) {
  json points = json::array();
  for (const auto& g : grid) points.push_back({{"learning_rate", g.learning_rate}, {"weight_decay", g.weight_decay}});
  return json{{"points", points}};
}

std::vector<double> parse_axis(const json& j, const std::string& path) {
  if (j.is_array()) {
    std::vector<double> out;
    for (const auto& v : j) {
      if (!v.is_number()) bad(path, "expected numbers");
      out.push_back(v.get<double>());
    }
    if (out.empty()) bad(path, "empty list");
    return out;
  }
  allow_keys(j, path, {"log_spaced"});
  if (!j.contains("log_spaced")) bad(path, "expected a list or {\"log_spaced\": ...}");
  const std::string p = child(path, "log_spaced");
  const json& ls = j.at("log_spaced");
  allow_keys(ls, p, {"n", "lo", "hi"});
  std::size_t n = 0;
  double lo = 0.0, hi = 0.0;
  read(ls, p, "n", n);
  read(ls, p, "lo", lo);
  read(ls, p, "hi", hi);
  try {
    return optim::log_spaced(n, lo, hi);
  } catch (const Error& e) {
    bad(p, e.what());
  }
}

std::vector<pipeline::GridPoint> parse_grid_json(const json& j, const std::string& path) {
  allow_keys(j, path, {"points", "learning_rates", "weight_decays"});
  std::vector<pipeline::GridPoint> grid;
  if (j.contains("points")) {
    if (j.contains("learning_rates") || j.contains("weight_decays")) {
      bad(path, "use either 'points' or 'learning_rates'/'weight_decays'");
    }
    const std::string p = child(path, "points");
    if (!j.at("points").is_array()) bad(p, "expected a list");
    for (const auto& e : j.at("points")) {
      allow_keys(e, p, {"learning_rate", "weight_decay"});
      pipeline::GridPoint g;
      read(e, p, "learning_rate", g.learning_rate);
      read(e, p, "weight_decay", g.weight_decay);
      grid.push_back(g);
    }
  } else {
    if (!j.contains("learning_rates")) bad(path, "missing 'learning_rates'");
    const auto lrs = parse_axis(j.at("learning_rates"), child(path, "learning_rates"));
    const auto wds = j.contains("weight_decays") ? parse_axis(j.at("weight_decays"), child(path, "weight_decays"))
                                                 : std::vector<double>{0.0};
    grid = pipeline::make_grid(lrs, wds);
  }
  if (grid.empty()) bad(path, "empty grid");
  for (const auto& g : grid) {
    if (!(g.learning_rate > 0.0) || g.weight_decay < 0.0) bad(path, "learning rates must be > 0, weight decay >= 0");
  }
  return grid;
}

template <typename T, typename Name>
json names_json(const std::vector<T>& values, Name name) {
  json out = json::array();
  for (const auto& v : values) out.push_back(std::string(name(v)));
  return out;
}

template <typename T, typename Parse>
void read_names(const json& j, const std::string& path, const char* key, std::vector<T>& out, Parse parse) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_array()) bad(child(path, key), "expected a list of names");
  out.clear();
  for (const auto& e : v) {
    if (!e.is_string()) bad(child(path, key), "expected a list of names");
    try {
      out.push_back(parse(e.get<std::string>()));
    } catch (const Error& err) {
      bad(child(path, key), err.what());
    }
  }
}

json costs_json(const std::vector<stats::CostSpec>& costs) {
  json out = json::array();
  for (const auto& c : costs) {
    out.push_back({{"task", c.task},
                   {"images", c.images},
                   {"seconds_per_image", c.seconds_per_image},
                   {"hourly_wage", c.hourly_wage},
                   {"cost_per_image", c.cost_per_image}});
  }
  return out;
}

json to_json_value(const RunConfig& c) {
  const auto& p = c.protocol;
  return json{
      {"schema_version", c.schema_version},
      {"seed", p.seed},
      {"output_dir", c.output_dir},
      {"workers", c.workers},
      {"record_timing", p.record_timing},
      {"data", {{"base", base_json(p.base)}, {"shift", shift_json(p.shift)}}},
      {"strategies", names_json(p.strategies, pipeline::strategy_name)},
      {"presets", p.presets},
      {"in_channels", p.in_channels},
      {"repeats", p.repeats},
      {"fractions", p.fractions},
      {"ood_scenarios", names_json(p.ood_scenarios, pipeline::scenario_name)},
      {"id_grid", grid_json(p.id_grid)},
      {"ood_grid", grid_json(p.ood_grid)},
      {"supervised",
       {{"optimizer", optimizer_json(p.supervised.optimizer)},
        {"schedule", optim::schedule_name(p.supervised.schedule)},
        {"learning_rate", p.supervised.learning_rate},
        {"steps", p.supervised.steps},
        {"batch_size", p.supervised.batch_size},
        {"augment", augment_json(p.supervised.policy)}}},
      {"contrastive",
       {{"temperature", p.contrastive.loss.temperature},
        {"batch_pairs", p.contrastive.loss.batch_pairs},
        {"optimizer", optimizer_json(p.contrastive.optimizer)},
        {"schedule", optim::schedule_name(p.contrastive.schedule)},
        {"learning_rate", p.contrastive.learning_rate},
        {"max_steps", p.contrastive.max_steps},
        {"checkpoint_every", p.contrastive.checkpoint_every},
        {"projection_dim", p.contrastive.projection_dim},
        {"augment", augment_json(p.contrastive.policy)}}},
      {"finetune",
       {{"optimizer", optim::optimizer_name(p.finetune.optimizer)},
        {"momentum", p.finetune.momentum},
        {"schedule", optim::schedule_name(p.finetune.schedule)},
        {"decay_factor", p.finetune.decay_factor},
        {"decay_steps", p.finetune.decay_steps},
        {"max_steps", p.finetune.max_steps},
        {"batch_size", p.finetune.batch_size},
        {"eval_every", p.finetune.eval_every},
        {"patience", p.finetune.patience},
        {"linear_probe", p.finetune.linear_probe},
        {"attention", p.finetune.attention},
        {"attention_hidden", p.finetune.attention_hidden},
        {"augment", augment_json(p.finetune.policy)}}},
      {"costs", costs_json(c.costs)},
  };
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& row : stats::reference_cost_rows()) costs.push_back(row.spec);
}

void RunConfig::validate() const {
  if (schema_version != kSchemaVersion) {
    bad("schema_version", "unsupported version " + std::to_string(schema_version));
  }
  require(!output_dir.empty(), "config output_dir: must not be empty");
  protocol.validate();
  for (const auto& c : costs) c.validate();
}

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kInvalidArgument, std::string("config: malformed JSON: ") + e.what());
  }
  allow_keys(j, "", {"schema_version", "seed", "output_dir", "workers", "record_timing", "data", "strategies",
                     "presets", "in_channels", "repeats", "fractions", "ood_scenarios", "id_grid", "ood_grid",
                     "supervised", "contrastive", "finetune", "costs"});
  if (!j.contains("schema_version")) bad("schema_version", "missing");
  RunConfig c;
  auto& p = c.protocol;
  read(j, "", "schema_version", c.schema_version);
  if (c.schema_version != kSchemaVersion) {
    bad("schema_version", "unsupported version " + std::to_string(c.schema_version));
  }
  read(j, "", "seed", p.seed);
  read(j, "", "output_dir", c.output_dir);
  read(j, "", "workers", c.workers);
  read(j, "", "record_timing", p.record_timing);
  if (j.contains("data")) {
    const json& d = j.at("data");
    allow_keys(d, "data", {"base", "shift"});
    if (d.contains("base")) parse_base(d.at("base"), "data.base", p.base);
    if (d.contains("shift")) parse_shift(d.at("shift"), "data.shift", p.shift);
  }
  read_names(j, "", "strategies", p.strategies, pipeline::parse_strategy);
  read(j, "", "presets", p.presets);
  read(j, "", "in_channels", p.in_channels);
  read(j, "", "repeats", p.repeats);
  read(j, "", "fractions", p.fractions);
  read_names(j, "", "ood_scenarios", p.ood_scenarios, pipeline::parse_scenario);
  if (j.contains("id_grid")) p.id_grid = parse_grid_json(j.at("id_grid"), "id_grid");
  if (j.contains("ood_grid")) p.ood_grid = parse_grid_json(j.at("ood_grid"), "ood_grid");

  if (j.contains("supervised")) {
    const json& s = j.at("supervised");
    allow_keys(s, "supervised", {"optimizer", "schedule", "learning_rate", "steps", "batch_size", "augment"});
    if (s.contains("optimizer")) parse_optimizer(s.at("optimizer"), "supervised.optimizer", p.supervised.optimizer);
    read_enum(s, "supervised", "schedule", p.supervised.schedule, optim::parse_schedule);
    read(s, "supervised", "learning_rate", p.supervised.learning_rate);
    read(s, "supervised", "steps", p.supervised.steps);
    read(s, "supervised", "batch_size", p.supervised.batch_size);
    if (s.contains("augment")) parse_augment(s.at("augment"), "supervised.augment", p.supervised.policy);
  }
  if (j.contains("contrastive")) {
    const json& s = j.at("contrastive");
    allow_keys(s, "contrastive", {"temperature", "batch_pairs", "optimizer", "schedule", "learning_rate",
                                  "max_steps", "checkpoint_every", "projection_dim", "augment"});
    read(s, "contrastive", "temperature", p.contrastive.loss.temperature);
    read(s, "contrastive", "batch_pairs", p.contrastive.loss.batch_pairs);
    if (s.contains("optimizer")) parse_optimizer(s.at("optimizer"), "contrastive.optimizer", p.contrastive.optimizer);
    read_enum(s, "contrastive", "schedule", p.contrastive.schedule, optim::parse_schedule);
    read(s, "contrastive", "learning_rate", p.contrastive.learning_rate);
    read(s, "contrastive", "max_steps", p.contrastive.max_steps);
    read(s, "contrastive", "checkpoint_every", p.contrastive.checkpoint_every);
    read(s, "contrastive", "projection_dim", p.contrastive.projection_dim);
    if (s.contains("augment")) parse_augment(s.at("augment"), "contrastive.augment", p.contrastive.policy);
  }
  if (j.contains("finetune")) {
    const json& s = j.at("finetune");
    const std::string f = "finetune";
    allow_keys(s, f, {"optimizer", "momentum", "schedule", "decay_factor", "decay_steps", "max_steps", "batch_size",
                      "eval_every", "patience", "linear_probe", "attention", "attention_hidden", "augment"});
    read_enum(s, f, "optimizer", p.finetune.optimizer, optim::parse_optimizer);
    read(s, f, "momentum", p.finetune.momentum);
    read_enum(s, f, "schedule", p.finetune.schedule, optim::parse_schedule);
    read(s, f, "decay_factor", p.finetune.decay_factor);
    read(s, f, "decay_steps", p.finetune.decay_steps);
    read(s, f, "max_steps", p.finetune.max_steps);
    read(s, f, "batch_size", p.finetune.batch_size);
    read(s, f, "eval_every", p.finetune.eval_every);
    read(s, f, "patience", p.finetune.patience);
    read(s, f, "linear_probe", p.finetune.linear_probe);
    read(s, f, "attention", p.finetune.attention);
    read(s, f, "attention_hidden", p.finetune.attention_hidden);
    if (s.contains("augment")) parse_augment(s.at("augment"), "finetune.augment", p.finetune.policy);
  }
  if (j.contains("costs")) {
    const json& cs = j.at("costs");
    if (!cs.is_array()) bad("costs", "expected a list");
    c.costs.clear();
    for (const auto& e : cs) {
      allow_keys(e, "costs[]", {"task", "images", "seconds_per_image", "hourly_wage", "cost_per_image"});
      stats::CostSpec spec;
      read(e, "costs[]", "task", spec.task);
      read(e, "costs[]", "images", spec.images);
      read(e, "costs[]", "seconds_per_image", spec.seconds_per_image);
      read(e, "costs[]", "hourly_wage", spec.hourly_wage);
      read(e, "costs[]", "cost_per_image", spec.cost_per_image);
      c.costs.push_back(spec);
    }
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "config: cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

std::string to_json(const RunConfig& config) { return to_json_value(config).dump(2); }

std::string config_hash(const RunConfig& config) { return git_blob_hash(to_json_value(config).dump()); }

std::vector<pipeline::GridPoint> parse_grid(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kInvalidArgument, std::string("grid: malformed JSON: ") + e.what());
  }
  return parse_grid_json(j, "grid");
}

}  // namespace remedis::config
