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

#include "remedis/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>

#include "remedis/error.hpp"

namespace remedis::stats {
namespace {

void check_labels(const Tensor& logits, std::span<const int> labels, const char* op) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    fail(ErrorCode::kShapeMismatch, std::string(op) + ": logits " + shape_str(logits.shape()) +
                                        " vs " + std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= logits.dim(1)) {
      fail(ErrorCode::kInvalidArgument, std::string(op) + ": label out of range");
    }
  }
}

// Modified Lentz evaluation of the incomplete beta continued fraction.
double beta_fraction(double a, double b, double x) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-16;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  fail(ErrorCode::kCompute, "incomplete_beta: continued fraction did not converge");
}

double interpolate(double x0, double y0, double x1, double y1, double target) {
  if (y1 == y0) return x0;
  return x0 + (x1 - x0) * (target - y0) / (y1 - y0);
}

double band_value(const CurvePoint& p, CurveBand band) {
  switch (band) {
    case CurveBand::kLo: return p.lo;
    case CurveBand::kHi: return p.hi;
    default: return p.mean;
  }
}

}  // namespace

double auc(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), "auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the Mann-Whitney U in integers: each positive gets 2 per negative
  // strictly below it and 1 per tied negative.
  std::int64_t twice_u = 0, positives = 0, negatives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::int64_t pos = 0, neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      const int y = labels[order[j]];
      require(y == 0 || y == 1, "auc: labels must be 0 or 1");
      (y == 1 ? pos : neg) += 1;
      ++j;
    }
    twice_u += pos * (2 * negatives + neg);
    positives += pos;
    negatives += neg;
    i = j;
  }
  if (positives == 0 || negatives == 0) {
    fail(ErrorCode::kInvalidArgument, "auc: both classes must be present");
  }
  // Evaluated as 0.5 + |d| and reflected so that swapping the labels gives
  // exactly 1 - auc.
  const std::int64_t d = twice_u - positives * negatives;
  const double half_gap = static_cast<double>(d < 0 ? -d : d) /
                          (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
  const double upper = 0.5 + half_gap;
  return d >= 0 ? upper : 1.0 - upper;
}

double topk_accuracy(const Tensor& logits, std::span<const int> labels, std::size_t k) {
  check_labels(logits, labels, "topk_accuracy");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (k == 0 || k > c) {
    fail(ErrorCode::kInvalidArgument, "topk_accuracy: k=" + std::to_string(k) +
                                          " exceeds class count " + std::to_string(c));
  }
  if (n == 0) fail(ErrorCode::kInvalidArgument, "topk_accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.raw() + i * c;
    const auto y = static_cast<std::size_t>(labels[i]);
    // Rank of the true class: classes strictly ahead of it.
    std::size_t ahead = 0;
    for (std::size_t j = 0; j < c; ++j) {
      if (row[j] > row[y] || (row[j] == row[y] && j < y)) ++ahead;
    }
    if (ahead < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
  return topk_accuracy(logits, labels, 1);
}

std::vector<int> argmax_rows(const Tensor& logits) {
  require(logits.rank() == 2 && logits.dim(1) > 0, "argmax_rows: expected [N,C] logits");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.raw() + i * c;
    out[i] = static_cast<int>(std::max_element(row, row + c) - row);
  }
  return out;
}

double mean(std::span<const double> values) {
  require(!values.empty(), "mean: empty series");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double sample_sd(std::span<const double> values) {
  require(values.size() >= 2, "sample_sd: need at least 2 values");
  const double mu = mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - mu) * (v - mu);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

double incomplete_beta(double a, double b, double x) {
  require(a > 0.0 && b > 0.0, "incomplete_beta: a and b must be positive");
  require(x >= 0.0 && x <= 1.0, "incomplete_beta: x must lie in [0,1]");
  if (x == 0.0 || x == 1.0) return x;
  const double front = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                                a * std::log(x) + b * std::log1p(-x));
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_fraction(a, b, x) / a;
  return 1.0 - front * beta_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double dof) {
  require(dof > 0.0, "student_t_cdf: dof must be positive");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  if (t * t < dof) {
    // Near the centre the complementary form keeps full precision.
    const double central = 0.5 * incomplete_beta(0.5, 0.5 * dof, t * t / (dof + t * t));
    return t >= 0.0 ? 0.5 + central : 0.5 - central;
  }
  const double tail = 0.5 * incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
  return t >= 0.0 ? 1.0 - tail : tail;
}

double student_t_quantile(double p, double dof) {
  require(p > 0.0 && p < 1.0, "student_t_quantile: p must lie in (0,1)");
  double lo = -1.0, hi = 1.0;
  while (student_t_cdf(lo, dof) > p) lo *= 2.0;
  while (student_t_cdf(hi, dof) < p) hi *= 2.0;
  for (int i = 0; i < 200 && hi - lo > 1e-15 * std::max(1.0, std::abs(hi)); ++i) {
    const double mid = 0.5 * (lo + hi);
    (student_t_cdf(mid, dof) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

Interval confidence_interval(std::span<const double> values, double level, CiMethod method) {
  if (values.size() < 2) {
    fail(ErrorCode::kInvalidArgument, "confidence_interval: need at least 2 repeats");
  }
  require(level > 0.0 && level < 1.0, "confidence_interval: level must lie in (0,1)");
  Interval ci;
  ci.mean = mean(values);
  if (method == CiMethod::kStudentT) {
    const double n = static_cast<double>(values.size());
    const double half = student_t_quantile(0.5 * (1.0 + level), n - 1.0) * sample_sd(values) / std::sqrt(n);
    ci.lo = ci.mean - half;
    ci.hi = ci.mean + half;
    return ci;
  }
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    const std::size_t j = std::min(i + 1, sorted.size() - 1);
    return sorted[i] + (pos - static_cast<double>(i)) * (sorted[j] - sorted[i]);
  };
  ci.lo = quantile(0.5 * (1.0 - level));
  ci.hi = quantile(0.5 * (1.0 + level));
  return ci;
}

WelchResult welch_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) {
    fail(ErrorCode::kInvalidArgument, "welch_ttest: each series needs at least 2 values");
  }
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double ma = mean(a), mb = mean(b);
  const double sa = sample_sd(a), sb = sample_sd(b);
  const double va = sa * sa / na, vb = sb * sb / nb;
  WelchResult r;
  if (va + vb == 0.0) {
    r.dof = na + nb - 2.0;
    if (ma == mb) return r;
    r.t = ma > mb ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.p = 0.0;
    return r;
  }
  r.t = (ma - mb) / std::sqrt(va + vb);
  r.dof = (va + vb) * (va + vb) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
  r.p = std::clamp(2.0 * student_t_cdf(-std::abs(r.t), r.dof), 0.0, 1.0);
  return r;
}

void validate_curve(const EfficiencyCurve& curve) {
  require(!curve.empty(), "efficiency curve: no points");
  for (std::size_t i = 1; i < curve.size(); ++i) {
    require(curve[i].fraction > curve[i - 1].fraction,
            "efficiency curve: fractions must be strictly increasing");
  }
}

std::optional<double> matching_fraction(const EfficiencyCurve& curve, double target,
                                        CurveBand band) {
  validate_curve(curve);
  if (band_value(curve[0], band) >= target) return curve[0].fraction;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const double y0 = band_value(curve[i - 1], band), y1 = band_value(curve[i], band);
    if (y1 >= target) {
      return interpolate(curve[i - 1].fraction, y0, curve[i].fraction, y1, target);
    }
  }
  return std::nullopt;
}

MatchingInterval matching_interval(const EfficiencyCurve& curve, double target) {
  return MatchingInterval{matching_fraction(curve, target, CurveBand::kMean),
                          matching_fraction(curve, target, CurveBand::kHi),
                          matching_fraction(curve, target, CurveBand::kLo)};
}

std::vector<SubgroupMetric> subgroup_metrics(
    std::span<const int> predictions, std::span<const int> labels,
    const std::map<std::string, std::vector<std::string>>& attributes,
    const std::string& attribute, std::size_t floor) {
  require(predictions.size() == labels.size(), "subgroup_metrics: length mismatch");
  auto it = attributes.find(attribute);
  if (it == attributes.end()) {
    fail(ErrorCode::kInvalidArgument, "subgroup_metrics: unknown attribute '" + attribute + "'");
  }
  require(it->second.size() == labels.size(), "subgroup_metrics: attribute length mismatch");
  std::map<std::string, std::pair<std::size_t, std::size_t>> tally;  // group -> (n, correct)
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& [n, correct] = tally[it->second[i]];
    ++n;
    if (predictions[i] == labels[i]) ++correct;
  }
  constexpr double z = 1.959963984540054;
  std::vector<SubgroupMetric> out;
  for (const auto& [group, counts] : tally) {
    SubgroupMetric m;
    m.group = group;
    m.n = counts.first;
    const double n = static_cast<double>(counts.first);
    const double p = static_cast<double>(counts.second) / n;
    m.accuracy = p;
    const double denom = 1.0 + z * z / n;
    const double centre = (p + z * z / (2.0 * n)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom;
    m.lo = centre - half;
    m.hi = centre + half;
    m.below_floor = counts.first < floor;
    out.push_back(m);
  }
  return out;
}

double CostSpec::effective_cost_per_image() const {
  return cost_per_image > 0.0 ? cost_per_image : hourly_wage * seconds_per_image / 3600.0;
}

void CostSpec::validate() const {
  if (images < 0.0 || seconds_per_image < 0.0 || hourly_wage < 0.0 || cost_per_image < 0.0) {
    fail(ErrorCode::kInvalidArgument, "cost spec '" + task + "': negative input");
  }
}

CostReport cost_from_saved(const CostSpec& spec, double samples_saved) {
  spec.validate();
  require(samples_saved >= 0.0, "cost_savings: negative saved count");
  CostReport r;
  r.total_hours = spec.images * spec.seconds_per_image / 3600.0;
  r.total_dollars = spec.images * spec.effective_cost_per_image();
  r.samples_saved = samples_saved;
  r.hours_saved = samples_saved * spec.seconds_per_image / 3600.0;
  r.dollars_saved = samples_saved * spec.effective_cost_per_image();
  return r;
}

CostReport cost_savings(const CostSpec& spec, double fraction_needed) {
  if (!(fraction_needed >= 0.0 && fraction_needed <= 1.0)) {
    fail(ErrorCode::kInvalidArgument, "cost_savings: fraction must lie in [0,1]");
  }
  spec.validate();
  return cost_from_saved(spec, std::round(spec.images * (1.0 - fraction_needed)));
}

const std::vector<CostRow>& reference_cost_rows() {
  static const std::vector<CostRow> rows{
      {{"T1", 17322, 60, 172, 2.86}, 289, 49, 11578, 193, 33, 0.0},
      {{"T2", 2524, 345, 147, 14}, 242, 35, 2342, 224, 33, 0.0},
      {{"T3", 27978, 122, 205, 6.95}, 948, 194, 23278, 789, 162, 6.98},
      {{"T4", 17904, 600, 138, 23}, 2984, 411, 16872, 2812, 385, 0.0},
      {{"T5", 3873, 600, 138, 23}, 645, 89, 3325, 554, 76, 0.0},
      {{"T6", 17178, 360, 205, 20.5}, 1718, 352, 15689, 1569, 322, 0.0},
  };
  return rows;
}

std::vector<CostCheck> check_cost_row(const CostRow& row) {
  const CostReport r = cost_from_saved(row.spec, row.saved_samples);
  // Displayed precision of the listed cost per image: cents, dimes or dollars.
  const double c = row.spec.cost_per_image;
  const double unit = c == std::round(c) ? 1.0 : (c * 10 == std::round(c * 10) ? 0.1 : 0.01);
  auto make = [&](std::string quantity, double computed, double displayed, double u) {
    return CostCheck{row.spec.task, std::move(quantity), computed, displayed, u,
                     std::abs(computed - displayed) <= u + 1e-9};
  };
  std::vector<CostCheck> out{
      make("cost_per_image", row.spec.hourly_wage * row.spec.seconds_per_image / 3600.0, c, unit),
      make("total_hours", r.total_hours, row.hours, 1.0),
      make("total_dollars_k", r.total_dollars / 1000.0, row.dollars_k, 1.0),
      make("saved_hours", r.hours_saved, row.saved_hours, 1.0),
      make("saved_dollars_k", r.dollars_saved / 1000.0, row.saved_dollars_k, 1.0),
  };
  if (row.text_cost_per_image > 0.0) {
    out.push_back(make("text_cost_per_image", row.text_cost_per_image, c, 0.01));
  }
  return out;
}

}  // namespace remedis::stats
