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

#include "remedis/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "json.hpp"
#include "remedis/config.hpp"
#include "remedis/error.hpp"
#include "remedis/hash.hpp"

namespace remedis::report {
namespace {

std::string num(double v) { return fmt::format("{:.6f}", v); }
std::string num_g(double v) { return fmt::format("{:.6g}", v); }
std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : ""; }
std::string frac(double f) { return fmt::format("{:g}", f); }
std::string pct(double f) { return fmt::format("{:.1f}%", 100.0 * f); }

std::string header(const std::string& manifest) {
  return "# manifest " + (manifest.empty() ? std::string("unknown") : manifest) + "\n";
}

std::string cell_name(const CellKey& k) {
  return k.strategy + "/" + k.arch + "/" + k.metric + "/" + k.scenario + "@" + frac(k.fraction);
}

const Cell* find_cell(const std::vector<Cell>& cells, const CellKey& key) {
  auto it = std::lower_bound(cells.begin(), cells.end(), key,
                             [](const Cell& c, const CellKey& k) { return c.key < k; });
  return it != cells.end() && it->key == key ? &*it : nullptr;
}

bool usable(const Cell* c) { return c && c->t_interval.has_value(); }

// ------------------------------------------------------------------- SVG

const char* kPalette[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

struct Frame {
  double width = 640, height = 420;
  double left = 70, right = 170, top = 50, bottom = 60;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

  double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
  double py(double y) const { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); }
};

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string svg_open(const Frame& f, const std::string& title) {
  std::string s = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" viewBox=\"0 0 {:.0f} {:.0f}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n",
      f.width, f.height, f.width, f.height);
  s += fmt::format("<rect width=\"{:.0f}\" height=\"{:.0f}\" fill=\"white\"/>\n", f.width, f.height);
  s += fmt::format("<text x=\"{:.2f}\" y=\"24\" font-size=\"14\">{}</text>\n", f.left, xml_escape(title));
  return s;
}

std::string svg_axes(const Frame& f, const std::string& xlabel, const std::string& ylabel,
                     const std::vector<double>& xticks, bool percent_x) {
  std::string s;
  s += fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"black\"/>\n", f.left,
                   f.py(f.y0), f.width - f.right, f.py(f.y0));
  s += fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"black\"/>\n", f.left,
                   f.py(f.y0), f.left, f.py(f.y1));
  for (double x : xticks) {
    s += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\" stroke=\"black\"/>\n",
                     f.px(x), f.py(f.y0), f.py(f.y0) + 4);
    s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{}</text>\n", f.px(x),
                     f.py(f.y0) + 18, percent_x ? fmt::format("{:g}%", 100.0 * x) : frac(x));
  }
  const int steps = 5;
  for (int i = 0; i <= steps; ++i) {
    const double y = f.y0 + (f.y1 - f.y0) * i / steps;
    s += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{2:.2f}\" y2=\"{1:.2f}\" stroke=\"#dddddd\"/>\n",
                     f.left, f.py(y), f.width - f.right);
    s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"end\">{:.3f}</text>\n", f.left - 6,
                     f.py(y) + 4, y);
  }
  s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{}</text>\n",
                   (f.left + f.width - f.right) / 2, f.height - 22, xml_escape(xlabel));
  s += fmt::format("<text x=\"16\" y=\"{:.2f}\" transform=\"rotate(-90 16 {:.2f})\" text-anchor=\"middle\">{}</text>\n",
                   (f.top + f.height - f.bottom) / 2, (f.top + f.height - f.bottom) / 2, xml_escape(ylabel));
  return s;
}

std::string svg_close(const Frame& f, const std::string& manifest) {
  return fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" font-size=\"9\" fill=\"#555555\">manifest {}</text>\n</svg>\n",
                     f.left, f.height - 6, manifest.empty() ? "unknown" : manifest);
}

void fit_y(Frame& f, double lo, double hi) {
  if (!(hi > lo)) {
    lo -= 0.05;
    hi += 0.05;
  }
  f.y0 = std::floor(lo * 20.0) / 20.0;
  f.y1 = std::ceil(hi * 20.0) / 20.0;
  if (f.y1 - f.y0 < 0.05) f.y1 = f.y0 + 0.05;
}

std::string efficiency_svg(const Report& r, const std::string& arch, const std::string& metric,
                           const std::vector<std::string>& strategies, const std::string& reference,
                           const std::string& manifest) {
  Frame f;
  double lo = 1e300, hi = -1e300;
  std::set<double> xs;
  std::vector<std::pair<std::string, stats::EfficiencyCurve>> curves;
  for (const auto& s : strategies) {
    auto c = efficiency_curve(r, s, arch, metric);
    for (const auto& p : c) {
      lo = std::min(lo, p.lo);
      hi = std::max(hi, p.hi);
      xs.insert(p.fraction);
    }
    curves.emplace_back(s, std::move(c));
  }
  if (xs.empty()) {
    lo = 0.0;
    hi = 1.0;
  }
  fit_y(f, lo, hi);
  std::string s = svg_open(f, "Out-of-distribution data efficiency (" + arch + ", " + metric + ")");
  s += svg_axes(f, "fraction of D_out training labels", metric, {xs.begin(), xs.end()}, true);
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto& [name, curve] = curves[i];
    if (curve.empty()) continue;
    const char* color = kPalette[i % std::size(kPalette)];
    std::string band, line;
    for (const auto& p : curve) band += fmt::format("{:.2f},{:.2f} ", f.px(p.fraction), f.py(p.hi));
    for (auto it = curve.rbegin(); it != curve.rend(); ++it)
      band += fmt::format("{:.2f},{:.2f} ", f.px(it->fraction), f.py(it->lo));
    for (const auto& p : curve) line += fmt::format("{:.2f},{:.2f} ", f.px(p.fraction), f.py(p.mean));
    band.pop_back();
    line.pop_back();
    s += fmt::format("<polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.18\" stroke=\"none\"/>\n", band, color);
    s += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n", line, color);
    for (const auto& p : curve)
      s += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3\" fill=\"{}\"/>\n", f.px(p.fraction),
                       f.py(p.mean), color);
    const double ly = f.top + 16.0 * static_cast<double>(i);
    s += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"12\" height=\"3\" fill=\"{}\"/>\n",
                     f.width - f.right + 12, ly - 4, color);
    s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\">{}</text>\n", f.width - f.right + 30, ly, xml_escape(name));
  }
  // Matching-fraction markers for the reference strategy.
  std::size_t marker = 0;
  for (const auto& m : r.matching) {
    if (m.strategy != reference || m.arch != arch || m.metric != metric || !m.target || !m.fraction.value) continue;
    const double x = f.px(*m.fraction.value);
    const double ty = std::clamp(*m.target, f.y0, f.y1);
    s += fmt::format(
        "<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"#d62728\" stroke-dasharray=\"4 3\"/>\n",
        f.left, f.py(ty), f.width - f.right, f.py(ty));
    s += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\" stroke=\"#d62728\" "
                     "stroke-width=\"1.5\"/>\n",
                     x, f.py(f.y0), f.py(f.y1));
    s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" fill=\"#d62728\">matches {} at 100%: {}</text>\n", x + 4,
                     f.py(f.y1) + 12 + 14.0 * static_cast<double>(marker), xml_escape(m.baseline),
                     pct(*m.fraction.value));
    ++marker;
  }
  s += svg_close(f, manifest);
  return s;
}

std::string zero_shot_svg(const Report& r, const std::string& arch, const std::string& metric,
                          const std::vector<std::string>& strategies, const std::string& manifest) {
  Frame f;
  f.right = 40;
  std::vector<std::pair<std::string, const Cell*>> bars;
  double lo = 1e300, hi = -1e300;
  for (const auto& s : strategies) {
    const Cell* c = find_cell(r.cells, CellKey{s, arch, metric, "zero_shot", 0.0});
    bars.emplace_back(s, usable(c) ? c : nullptr);
    if (usable(c)) {
      lo = std::min(lo, c->t_interval->lo);
      hi = std::max(hi, c->t_interval->hi);
    }
  }
  if (lo > hi) {
    lo = 0.0;
    hi = 1.0;
  }
  fit_y(f, std::min(lo, f.y0 + lo) * 0.9, hi);
  f.x0 = 0.0;
  f.x1 = static_cast<double>(std::max<std::size_t>(1, bars.size()));
  std::string s = svg_open(f, "Zero-shot out-of-distribution " + metric + " (" + arch + ")");
  s += svg_axes(f, "strategy", metric, {}, false);
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto& [name, c] = bars[i];
    const double cx = f.px(static_cast<double>(i) + 0.5);
    s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{}</text>\n", cx, f.py(f.y0) + 18,
                     xml_escape(name));
    if (!c) {
      s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">missing</text>\n", cx,
                       f.py(f.y0) - 8);
      continue;
    }
    const char* color = kPalette[i % std::size(kPalette)];
    const double w = (f.px(1.0) - f.px(0.0)) * 0.5;
    const double top = f.py(c->t_interval->mean);
    s += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"{}\" "
                     "fill-opacity=\"0.7\"/>\n",
                     cx - w / 2, top, w, f.py(f.y0) - top, color);
    s += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\" stroke=\"black\"/>\n", cx,
                     f.py(c->t_interval->lo), f.py(c->t_interval->hi));
    s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{:.3f}</text>\n", cx, top - 6,
                     c->t_interval->mean);
  }
  s += svg_close(f, manifest);
  return s;
}

// ---------------------------------------------------------------- tables

std::string cells_csv(const Report& r, const std::string& manifest) {
  std::string out = header(manifest) + "strategy,arch,metric,scenario,fraction,n,missing,mean,t_lo,t_hi,pct_lo,pct_hi\n";
  for (const auto& c : r.cells) {
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", c.key.strategy, c.key.arch, c.key.metric,
                       c.key.scenario, frac(c.key.fraction), c.values.size(), c.missing,
                       c.t_interval ? num(c.t_interval->mean) : "", c.t_interval ? num(c.t_interval->lo) : "",
                       c.t_interval ? num(c.t_interval->hi) : "",
                       c.percentile_interval ? num(c.percentile_interval->lo) : "",
                       c.percentile_interval ? num(c.percentile_interval->hi) : "");
  }
  return out;
}

std::string welch_csv(const Report& r, const std::string& manifest) {
  std::string out = header(manifest) +
                    "reference,baseline,arch,metric,scenario,fraction,mean_reference,mean_baseline,t,dof,p\n";
  for (const auto& w : r.welch) {
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", w.reference, w.baseline, w.arch, w.metric, w.scenario,
                       frac(w.fraction), num(w.mean_reference), num(w.mean_baseline),
                       w.result ? num_g(w.result->t) : "", w.result ? num_g(w.result->dof) : "",
                       w.result ? num_g(w.result->p) : "");
  }
  return out;
}

std::string matching_csv(const Report& r, const std::string& manifest) {
  std::string out = header(manifest) + "strategy,baseline,arch,metric,target,fraction,lo,hi\n";
  for (const auto& m : r.matching) {
    out += fmt::format("{},{},{},{},{},{},{},{}\n", m.strategy, m.baseline, m.arch, m.metric, opt_num(m.target),
                       opt_num(m.fraction.value), opt_num(m.fraction.lo), opt_num(m.fraction.hi));
  }
  return out;
}

std::string costs_csv(const Report& r, const std::string& manifest) {
  std::string out = header(manifest) +
                    "task,images,seconds_per_image,hourly_wage,cost_per_image,fraction_needed,total_hours,"
                    "total_dollars,samples_saved,hours_saved,dollars_saved\n";
  for (const auto& c : r.costs) {
    const auto& rep = c.report;
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", c.spec.task, frac(c.spec.images),
                       frac(c.spec.seconds_per_image), frac(c.spec.hourly_wage),
                       num(c.spec.effective_cost_per_image()), opt_num(c.fraction_needed),
                       rep ? fmt::format("{:.2f}", rep->total_hours) : "",
                       rep ? fmt::format("{:.2f}", rep->total_dollars) : "",
                       rep ? fmt::format("{:.0f}", rep->samples_saved) : "",
                       rep ? fmt::format("{:.2f}", rep->hours_saved) : "",
                       rep ? fmt::format("{:.2f}", rep->dollars_saved) : "");
  }
  return out;
}

std::string cost_checks_csv(const Report& r, const std::string& manifest) {
  std::string out = header(manifest) + "task,quantity,computed,displayed,unit,agrees\n";
  for (const auto& c : r.reference_checks) {
    out += fmt::format("{},{},{},{},{},{}\n", c.task, c.quantity, num_g(c.computed), num_g(c.displayed),
                       num_g(c.unit), c.agrees ? "yes" : "no");
  }
  return out;
}

struct SubgroupTable {
  std::string strategy, arch, scenario;
  double fraction;
  std::vector<stats::SubgroupMetric> metrics;
};

std::vector<SubgroupTable> subgroup_tables(const std::vector<pipeline::PredictionRow>& preds) {
  std::map<std::tuple<std::string, std::string, std::string, double>, std::vector<const pipeline::PredictionRow*>>
      groups;
  for (const auto& p : preds) groups[{p.strategy, p.arch, p.scenario, p.fraction}].push_back(&p);
  std::vector<SubgroupTable> out;
  for (auto& [key, rows] : groups) {
    std::stable_sort(rows.begin(), rows.end(), [](const auto* a, const auto* b) {
      return std::tie(a->repeat, a->record_id) < std::tie(b->repeat, b->record_id);
    });
    std::vector<int> predictions, labels;
    std::map<std::string, std::vector<std::string>> attributes;
    auto& groups_attr = attributes["subgroup"];
    for (const auto* r : rows) {
      predictions.push_back(r->prediction);
      labels.push_back(r->label);
      groups_attr.push_back("g" + std::to_string(r->subgroup));
    }
    out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), std::get<3>(key),
                   stats::subgroup_metrics(predictions, labels, attributes, "subgroup")});
  }
  return out;
}

std::string subgroups_csv(const std::vector<SubgroupTable>& tables, const std::string& manifest) {
  std::string out = header(manifest) + "strategy,arch,scenario,fraction,attribute,group,n,accuracy,lo,hi,below_floor\n";
  for (const auto& t : tables)
    for (const auto& m : t.metrics) {
      out += fmt::format("{},{},{},{},subgroup,{},{},{},{},{},{}\n", t.strategy, t.arch, t.scenario,
                         frac(t.fraction), m.group, m.n, num(m.accuracy), num(m.lo), num(m.hi),
                         m.below_floor ? "yes" : "no");
    }
  return out;
}

std::string summary_text(const Report& r, const ReportInput& in, const std::vector<std::string>& strategies,
                         const std::vector<SubgroupTable>& subgroups) {
  std::string s;
  s += "report\n";
  s += "  manifest: " + (in.manifest_hash.empty() ? std::string("unknown") : in.manifest_hash) + "\n";
  s += "  reference: " + in.reference + "\n";
  s += fmt::format("  strategies: {}\n", fmt::join(strategies, ", "));
  s += fmt::format("  confidence level: {:g}\n", in.level);
  s += fmt::format("  status: {}\n", r.complete() ? "complete" : "incomplete");
  if (!r.missing.empty()) {
    s += "missing\n";
    for (const auto& m : r.missing) s += "  - " + m + "\n";
  }
  s += "cells (mean [t-interval])\n";
  for (const auto& c : r.cells) {
    s += "  " + cell_name(c.key) + ": ";
    s += c.t_interval ? fmt::format("{} [{}, {}] n={}", num(c.t_interval->mean), num(c.t_interval->lo),
                                    num(c.t_interval->hi), c.values.size())
                      : fmt::format("missing (n={})", c.values.size());
    s += "\n";
  }
  s += "welch (reference vs baseline)\n";
  for (const auto& w : r.welch) {
    s += fmt::format("  {} vs {} {}/{}/{}@{}: ", w.reference, w.baseline, w.arch, w.metric, w.scenario, frac(w.fraction));
    s += w.result ? fmt::format("diff={} t={} dof={} p={}", num(w.mean_reference - w.mean_baseline),
                                num_g(w.result->t), num_g(w.result->dof), num_g(w.result->p))
                  : std::string("missing");
    s += "\n";
  }
  s += "matching fractions\n";
  for (const auto& m : r.matching) {
    s += fmt::format("  {} vs {} {}/{}: target={} ", m.strategy, m.baseline, m.arch, m.metric, opt_num(m.target));
    if (m.fraction.value) {
      s += fmt::format("fraction={} ({}, {})", pct(*m.fraction.value),
                       m.fraction.lo ? pct(*m.fraction.lo) : "n/a", m.fraction.hi ? pct(*m.fraction.hi) : "not reached");
    } else {
      s += "fraction=not reached";
    }
    s += "\n";
  }
  s += "annotation cost\n";
  for (const auto& c : r.costs) {
    s += fmt::format("  {}: cost/image=${:.4f}", c.spec.task, c.spec.effective_cost_per_image());
    if (c.report) {
      s += fmt::format(" total={:.1f} h ${:.2f}", c.report->total_hours, c.report->total_dollars);
      if (c.fraction_needed)
        s += fmt::format(" at f={} saves {:.0f} samples, {:.1f} h, ${:.2f}", pct(*c.fraction_needed),
                         c.report->samples_saved, c.report->hours_saved, c.report->dollars_saved);
    }
    s += "\n";
  }
  s += "reference cost rows\n";
  std::size_t disagreements = 0;
  for (const auto& c : r.reference_checks) {
    if (c.agrees) continue;
    ++disagreements;
    s += fmt::format("  disagreement {} {}: computed {} displayed {}\n", c.task, c.quantity, num_g(c.computed),
                     num_g(c.displayed));
  }
  s += fmt::format("  checks: {} of {} agree within one displayed unit\n", r.reference_checks.size() - disagreements,
                   r.reference_checks.size());
  if (!subgroups.empty()) {
    s += "subgroups (pooled over repeats)\n";
    for (const auto& t : subgroups)
      for (const auto& m : t.metrics)
        s += fmt::format("  {}/{}/{}@{} {}: acc={} [{}, {}] n={}{}\n", t.strategy, t.arch, t.scenario,
                         frac(t.fraction), m.group, num(m.accuracy), num(m.lo), num(m.hi), m.n,
                         m.below_floor ? " (below floor)" : "");
  }
  return s;
}

}  // namespace

stats::EfficiencyCurve efficiency_curve(const Report& report, const std::string& strategy, const std::string& arch,
                                        const std::string& metric) {
  stats::EfficiencyCurve curve;
  for (const auto& c : report.cells) {
    if (c.key.strategy != strategy || c.key.arch != arch || c.key.metric != metric || !c.t_interval) continue;
    const bool zero = c.key.scenario == "zero_shot";
    if (!zero && c.key.scenario != "ood_finetune") continue;
    curve.push_back({zero ? 0.0 : c.key.fraction, c.t_interval->mean, c.t_interval->lo, c.t_interval->hi});
  }
  std::sort(curve.begin(), curve.end(), [](const auto& a, const auto& b) { return a.fraction < b.fraction; });
  curve.erase(std::unique(curve.begin(), curve.end(),
                          [](const auto& a, const auto& b) { return a.fraction == b.fraction; }),
              curve.end());
  return curve;
}

Report build_report(const ReportInput& input) {
  if (input.rows.empty()) fail(ErrorCode::kInvalidArgument, "report: no metric rows");
  Report r;
  // Group rows into cells.
  std::map<CellKey, std::vector<const pipeline::MetricRow*>> grouped;
  std::set<std::string> strategy_set, archs, metrics;
  std::set<std::pair<std::string, double>> scenario_points;
  std::size_t max_repeats = 0;
  for (const auto& row : input.rows) {
    grouped[{row.strategy, row.arch, row.metric_name, row.scenario, row.fraction}].push_back(&row);
    strategy_set.insert(row.strategy);
    archs.insert(row.arch);
    metrics.insert(row.metric_name);
    scenario_points.insert({row.scenario, row.fraction});
  }
  for (auto& [key, rows] : grouped) {
    std::stable_sort(rows.begin(), rows.end(), [](const auto* a, const auto* b) { return a->repeat < b->repeat; });
    max_repeats = std::max(max_repeats, rows.size());
  }
  for (const auto& s : strategy_set)
    for (const auto& a : archs)
      for (const auto& m : metrics)
        for (const auto& [scenario, fraction] : scenario_points) {
          const CellKey key{s, a, m, scenario, fraction};
          Cell cell;
          cell.key = key;
          auto it = grouped.find(key);
          std::size_t rows = 0;
          if (it != grouped.end()) {
            rows = it->second.size();
            for (const auto* row : it->second) {
              if (row->value) {
                cell.values.push_back(*row->value);
              } else {
                ++cell.missing;
              }
            }
          }
          cell.missing += max_repeats - rows;
          if (cell.values.size() >= 2) {
            cell.t_interval = stats::confidence_interval(cell.values, input.level, stats::CiMethod::kStudentT);
            cell.percentile_interval = stats::confidence_interval(cell.values, input.level, stats::CiMethod::kPercentile);
          }
          if (!cell.t_interval) {
            r.missing.push_back(cell_name(key) + ": " + std::to_string(cell.values.size()) +
                                " usable repeat(s), need >= 2");
          } else if (cell.missing > 0) {
            r.missing.push_back(cell_name(key) + ": " + std::to_string(cell.missing) + " repeat(s) missing");
          }
          r.cells.push_back(std::move(cell));
        }

  std::vector<std::string> strategies(strategy_set.begin(), strategy_set.end());
  // Reference first so charts and tables lead with it.
  if (auto it = std::find(strategies.begin(), strategies.end(), input.reference); it != strategies.end()) {
    std::rotate(strategies.begin(), it, it + 1);
  }
  const bool has_reference = strategy_set.contains(input.reference);

  if (has_reference) {
    for (const auto& base : strategies) {
      if (base == input.reference) continue;
      for (const auto& a : archs)
        for (const auto& m : metrics) {
          for (const auto& [scenario, fraction] : scenario_points) {
            const Cell* ref = find_cell(r.cells, {input.reference, a, m, scenario, fraction});
            const Cell* other = find_cell(r.cells, {base, a, m, scenario, fraction});
            WelchRow w{input.reference, base, a, m, scenario, fraction, std::nullopt, 0.0, 0.0};
            if (usable(ref) && usable(other)) {
              w.result = stats::welch_ttest(ref->values, other->values);
              w.mean_reference = ref->t_interval->mean;
              w.mean_baseline = other->t_interval->mean;
            }
            r.welch.push_back(w);
          }
          // Target: the baseline's mean at its largest fine-tune fraction.
          MatchingRow mr{input.reference, base, a, m, std::nullopt, {}};
          const auto base_curve = efficiency_curve(r, base, a, m);
          const auto ref_curve = efficiency_curve(r, input.reference, a, m);
          if (!base_curve.empty() && base_curve.back().fraction > 0.0) mr.target = base_curve.back().mean;
          if (mr.target && !ref_curve.empty()) mr.fraction = stats::matching_interval(ref_curve, *mr.target);
          r.matching.push_back(mr);
        }
    }
  }

  // Costs use the first available matching fraction on accuracy (else any metric).
  std::optional<double> needed;
  for (const char* preferred : {"accuracy", ""}) {
    for (const auto& m : r.matching) {
      if (needed) break;
      if ((*preferred == '\0' || m.metric == preferred) && m.fraction.value) needed = m.fraction.value;
    }
  }
  for (const auto& spec : input.costs) {
    CostLine line{spec, needed, std::nullopt};
    line.report = needed ? stats::cost_savings(spec, *needed) : stats::cost_savings(spec, 1.0);
    r.costs.push_back(line);
  }
  for (const auto& row : stats::reference_cost_rows()) {
    const auto checks = stats::check_cost_row(row);
    r.reference_checks.insert(r.reference_checks.end(), checks.begin(), checks.end());
  }

  const auto subgroups = subgroup_tables(input.predictions);
  const std::string& mh = input.manifest_hash;
  r.files["cells.csv"] = cells_csv(r, mh);
  r.files["welch.csv"] = welch_csv(r, mh);
  r.files["matching.csv"] = matching_csv(r, mh);
  r.files["costs.csv"] = costs_csv(r, mh);
  r.files["cost_checks.csv"] = cost_checks_csv(r, mh);
  if (!subgroups.empty()) r.files["subgroups.csv"] = subgroups_csv(subgroups, mh);
  r.files["summary.txt"] = summary_text(r, input, strategies, subgroups);
  for (const auto& a : archs)
    for (const auto& m : metrics) {
      r.files["efficiency_" + a + "_" + m + ".svg"] = efficiency_svg(r, a, m, strategies, input.reference, mh);
      r.files["zero_shot_" + a + "_" + m + ".svg"] = zero_shot_svg(r, a, m, strategies, mh);
    }
  return r;
}

ReportInput load_results(const std::filesystem::path& dir, std::string reference) {
  auto read = [&](const char* name) -> std::optional<std::string> {
    std::ifstream in(dir / name, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream text;
    text << in.rdbuf();
    return text.str();
  };
  if (!std::filesystem::is_directory(dir)) {
    fail(ErrorCode::kInvalidArgument, "report: results directory " + dir.string() + " does not exist");
  }
  const auto metrics = read("metrics.csv");
  if (!metrics) fail(ErrorCode::kInvalidArgument, "report: no metrics.csv in " + dir.string());
  ReportInput in;
  in.reference = std::move(reference);
  in.rows = pipeline::parse_metrics_csv(*metrics);
  if (in.rows.empty()) fail(ErrorCode::kInvalidArgument, "report: metrics.csv has no rows");
  if (auto preds = read("predictions.csv")) in.predictions = pipeline::parse_predictions_csv(*preds);
  config::RunConfig defaults;
  in.costs = defaults.costs;
  if (auto manifest = read("manifest.json")) {
    in.manifest_hash = git_blob_hash(*manifest);
    try {
      const auto j = nlohmann::json::parse(*manifest);
      if (j.contains("config")) in.costs = config::parse_run_config(j.at("config").dump()).costs;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kInvalidArgument, std::string("report: malformed manifest.json: ") + e.what());
    }
  }
  return in;
}

void write_report(const Report& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, content] : report.files) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "report: cannot write " + (dir / name).string());
    out << content;
  }
}

}  // namespace remedis::report
