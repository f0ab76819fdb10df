// Copyright 2026 The unmerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace unmerge::testing {

// Reference TIES over single vectors written from the definition: rank each
// vector's entries by (|v| desc, index asc) and keep the first ceil(q/4 * n),
// elect the sign of the column sum, then average the agreeing nonzeros.
inline std::vector<float> ties_oracle(const std::vector<std::vector<float>>& vs, int quarters) {
  const std::size_t n = vs[0].size();
  const std::size_t keep = (static_cast<std::size_t>(quarters) * n + 3) / 4;
  std::vector<std::vector<float>> trimmed;
  for (const auto& v : vs) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      const float fa = std::fabs(v[a]);
      const float fb = std::fabs(v[b]);
      return fa != fb ? fa > fb : a < b;
    });
    std::vector<float> t(n, 0.0f);
    for (std::size_t k = 0; k < keep; ++k) t[idx[k]] = v[idx[k]];
    trimmed.push_back(t);
  }
  std::vector<float> out(n, 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (const auto& t : trimmed) sum += t[i];
    const int sign = sum > 0 ? 1 : (sum < 0 ? -1 : 0);
    if (sign == 0) continue;
    double acc = 0.0;
    int count = 0;
    for (const auto& t : trimmed) {
      if ((sign > 0 && t[i] > 0) || (sign < 0 && t[i] < 0)) {
        acc += t[i];
        ++count;
      }
    }
    if (count > 0) out[i] = static_cast<float>(acc / count);
  }
  return out;
}

}  // namespace unmerge::testing
