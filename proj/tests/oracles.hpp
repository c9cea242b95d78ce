#pragma once

// Reference computations used by the tests. They only depend on the public
// data types, never on the code paths they check.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>
#include <algorithm>

namespace oracle {

// Exact per-pixel level map E[w*M] / E[M] for r = 0 segment masks, by
// enumerating every subset of `nseg` segments. `weight(bits)` gives the mask
// weight for the subset whose i-th bit says segment i is on.
inline std::vector<double> exhaustive_level_map(const std::vector<int>& labels, int nseg, double p,
                                                const std::function<double(std::uint32_t)>& weight) {
  std::vector<double> num(nseg, 0.0), den(nseg, 0.0);
  for (std::uint32_t bits = 0; bits < (1u << nseg); ++bits) {
    const int on = __builtin_popcount(bits);
    const double prob = std::pow(p, on) * std::pow(1.0 - p, nseg - on);
    const double w = weight(bits);
    for (int s = 0; s < nseg; ++s)
      if (bits >> s & 1u) {
        num[s] += prob * w;
        den[s] += prob;
      }
  }
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = den[labels[i]] > 0 ? num[labels[i]] / den[labels[i]] : 0.0;
  return out;
}

// Optimal within-cluster SSE for 1-D k-means by dynamic programming over the
// sorted values (clusters are contiguous runs in 1-D).
inline double kmeans_dp_sse(std::vector<double> v, int k) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  std::vector<double> s1(n + 1, 0.0), s2(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    s1[i + 1] = s1[i] + v[i];
    s2[i + 1] = s2[i] + v[i] * v[i];
  }
  const auto cost = [&](std::size_t a, std::size_t b) {  // [a, b)
    const double m = static_cast<double>(b - a);
    const double s = s1[b] - s1[a];
    return std::max(0.0, (s2[b] - s2[a]) - s * s / m);
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> dp(k + 1, std::vector<double>(n + 1, inf));
  dp[0][0] = 0.0;
  for (int c = 1; c <= k; ++c)
    for (std::size_t b = 1; b <= n; ++b)
      for (std::size_t a = c - 1; a < b; ++a)
        if (dp[c - 1][a] < inf) dp[c][b] = std::min(dp[c][b], dp[c - 1][a] + cost(a, b));
  return dp[k][n];
}

}  // namespace oracle
