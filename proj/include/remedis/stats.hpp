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

// Evaluation metrics, repeat-level uncertainty, Welch tests, matching
// fractions and the annotation cost model.

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "remedis/tensor.hpp"

namespace remedis::stats {

// Mann-Whitney AUC; ties count 0.5. Labels are 0/1.
double auc(std::span<const double> scores, std::span<const int> labels);
// Row-wise top-k over logits [N,C]. Equal logits rank the lower class index
// first.
double topk_accuracy(const Tensor& logits, std::span<const int> labels, std::size_t k);
double accuracy(const Tensor& logits, std::span<const int> labels);
std::vector<int> argmax_rows(const Tensor& logits);

double mean(std::span<const double> values);
// Sample standard deviation (n - 1 denominator).
double sample_sd(std::span<const double> values);

// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);
double student_t_cdf(double t, double dof);
double student_t_quantile(double p, double dof);

enum class CiMethod { kStudentT, kPercentile };

struct Interval {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

// kStudentT: mean +- t_{n-1,(1+level)/2} * s / sqrt(n).
// kPercentile: linear-interpolated empirical quantiles of the repeats.
Interval confidence_interval(std::span<const double> values, double level = 0.95,
                             CiMethod method = CiMethod::kStudentT);

struct WelchResult {
  double t = 0.0;
  double p = 1.0;
  double dof = 0.0;
};

// Two-sided Welch test. Zero variance in both samples: equal means give
// t = 0, p = 1; unequal means give t = +-inf, p = 0. The dof is then
// n_a + n_b - 2.
WelchResult welch_ttest(std::span<const double> a, std::span<const double> b);

struct CurvePoint {
  double fraction = 0.0;
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};
using EfficiencyCurve = std::vector<CurvePoint>;

void validate_curve(const EfficiencyCurve& curve);

enum class CurveBand { kMean, kLo, kHi };

// Smallest fraction where the piecewise-linear curve reaches `target`;
// nullopt when the target exceeds every point.
std::optional<double> matching_fraction(const EfficiencyCurve& curve, double target,
                                        CurveBand band = CurveBand::kMean);

struct MatchingInterval {
  std::optional<double> value;
  std::optional<double> lo;  // from the upper band
  std::optional<double> hi;  // from the lower band
};
MatchingInterval matching_interval(const EfficiencyCurve& curve, double target);

struct SubgroupMetric {
  std::string group;
  std::size_t n = 0;
  double accuracy = 0.0;
  double lo = 0.0;  // Wilson 95% score interval
  double hi = 0.0;
  bool below_floor = false;
};

// `attributes` maps attribute name -> per-example group value.
std::vector<SubgroupMetric> subgroup_metrics(
    std::span<const int> predictions, std::span<const int> labels,
    const std::map<std::string, std::vector<std::string>>& attributes,
    const std::string& attribute, std::size_t floor = 30);

struct CostSpec {
  std::string task;
  double images = 0.0;
  double seconds_per_image = 0.0;
  double hourly_wage = 0.0;
  // Listed cost per image; 0 derives it as wage * seconds / 3600.
  double cost_per_image = 0.0;

  double effective_cost_per_image() const;
  void validate() const;
};

struct CostReport {
  double total_hours = 0.0;
  double total_dollars = 0.0;
  double samples_saved = 0.0;
  double hours_saved = 0.0;
  double dollars_saved = 0.0;
};

// samples_saved = round(images * (1 - f)); hours and dollars follow from it.
CostReport cost_savings(const CostSpec& spec, double fraction_needed);
// Same, from an explicit count of saved samples.
CostReport cost_from_saved(const CostSpec& spec, double samples_saved);

// A reference annotation-cost row with its displayed values. Dollar totals
// are in thousands.
struct CostRow {
  CostSpec spec;
  double hours = 0.0;
  double dollars_k = 0.0;
  double saved_samples = 0.0;
  double saved_hours = 0.0;
  double saved_dollars_k = 0.0;
  double text_cost_per_image = 0.0;  // 0 when the alternate listed cost agrees
};
const std::vector<CostRow>& reference_cost_rows();

struct CostCheck {
  std::string task;
  std::string quantity;
  double computed = 0.0;
  double displayed = 0.0;
  double unit = 0.0;
  bool agrees = false;  // |computed - displayed| <= unit
};
// Recomputes every displayed quantity of a row; agreement is within one unit
// of the displayed precision.
std::vector<CostCheck> check_cost_row(const CostRow& row);

}  // namespace remedis::stats
