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

// Independent reference computations used by unit and acceptance tests.
// Nothing here calls into the tensorized library paths.

#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

// Direct double loop over anchors:
//   l_i = -log( exp(sim(z_i, z_j)/t) / sum_{k != i} exp(sim(z_i, z_k)/t) )
inline double nt_xent(const std::vector<std::vector<double>>& z,
                      const std::vector<std::size_t>& pairing, double t,
                      std::vector<double>* terms = nullptr) {
  const std::size_t n = z.size();
  auto sim = [&](std::size_t a, std::size_t b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t d = 0; d < z[a].size(); ++d) {
      dot += z[a][d] * z[b][d];
      na += z[a][d] * z[a][d];
      nb += z[b][d] * z[b][d];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };
  double total = 0.0;
  if (terms) terms->assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (k != i) denom += std::exp(sim(i, k) / t);
    }
    const double li = -std::log(std::exp(sim(i, pairing[i]) / t) / denom);
    if (terms) (*terms)[i] = li;
    total += li;
  }
  return total / static_cast<double>(n);
}

}  // namespace oracle
