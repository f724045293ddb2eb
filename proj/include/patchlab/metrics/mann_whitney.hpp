#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <vector>

#include "patchlab/errors.hpp"

namespace patchlab {

struct mann_whitney_result {
  double u = 0.0;  // for sample a: #(a > b) + 0.5 * #(a == b)
  double p = 1.0;  // two-sided
  bool exact = false;
};

inline constexpr std::size_t mann_whitney_exact_limit = 400;  // |a| * |b|

inline double mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  double u = 0.0;
  for (double x : a)
    for (double y : b) u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
  return u;
}

namespace detail {

// Midranks of the pooled sample, doubled so they are integers.
inline std::vector<long long> doubled_midranks(std::span<const double> pooled) {
  std::vector<std::size_t> order(pooled.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return pooled[x] < pooled[y]; });
  std::vector<long long> r(pooled.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    const long long twice = static_cast<long long>(i + 1 + j + 1);  // 2 * average of ranks i+1..j+1
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = twice;
    i = j + 1;
  }
  return r;
}

}  // namespace detail

// Exact two-sided p under the permutation distribution of the rank sum,
// conditional on the observed ties: P(|U - mean| >= |u - mean|).
inline mann_whitney_result mann_whitney_exact(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw metric_error("mann_whitney: both samples must be non-empty");
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto r2 = detail::doubled_midranks(pooled);
  // The DP runs over the smaller sample; the two-sided p is the same for both.
  const bool use_a = a.size() <= b.size();
  const std::size_t n1 = use_a ? a.size() : b.size(), n = pooled.size();
  long long obs = 0, total = 0;
  for (std::size_t i = 0; i < n1; ++i) obs += r2[use_a ? i : a.size() + i];
  for (auto v : r2) total += v;

  // count[k][s]: number of k-subsets with doubled rank sum s
  std::vector<std::vector<double>> count(n1 + 1, std::vector<double>(static_cast<std::size_t>(total) + 1, 0.0));
  count[0][0] = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto w = static_cast<std::size_t>(r2[i]);
    for (std::size_t k = std::min(n1, i + 1); k >= 1; --k) {
      auto& dst = count[k];
      const auto& src = count[k - 1];
      for (std::size_t s = dst.size(); s-- > w;) dst[s] += src[s - w];
    }
  }
  // doubled mean rank sum of the sample: n1 (n + 1)
  const long long mean2 = static_cast<long long>(n1 * (n + 1));
  const long long dev = std::llabs(obs - mean2);
  double hit = 0.0, all = 0.0;
  for (std::size_t s = 0; s < count[n1].size(); ++s) {
    const double c = count[n1][s];
    if (c == 0.0) continue;
    all += c;
    if (std::llabs(static_cast<long long>(s) - mean2) >= dev) hit += c;
  }
  mann_whitney_result res;
  res.u = mann_whitney_u(a, b);
  res.p = std::min(1.0, hit / all);
  res.exact = true;
  return res;
}

// Normal approximation with tie and continuity corrections.
inline mann_whitney_result mann_whitney_normal(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw metric_error("mann_whitney: both samples must be non-empty");
  const double n1 = static_cast<double>(a.size()), n2 = static_cast<double>(b.size());
  const double n = n1 + n2;
  std::map<double, std::size_t> groups;
  for (double x : a) ++groups[x];
  for (double x : b) ++groups[x];
  double ties = 0.0;
  for (const auto& [v, t] : groups) {
    const double td = static_cast<double>(t);
    ties += td * td * td - td;
  }
  mann_whitney_result res;
  res.u = mann_whitney_u(a, b);
  const double mean = n1 * n2 / 2.0;
  const double var = n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
  if (!(var > 0.0)) {
    res.p = 1.0;
    return res;
  }
  const double z = std::max(0.0, std::fabs(res.u - mean) - 0.5) / std::sqrt(var);
  res.p = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return res;
}

inline mann_whitney_result mann_whitney(std::span<const double> a, std::span<const double> b) {
  if (a.size() * b.size() <= mann_whitney_exact_limit) return mann_whitney_exact(a, b);
  return mann_whitney_normal(a, b);
}

}  // namespace patchlab
