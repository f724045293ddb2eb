#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "patchlab/errors.hpp"

namespace patchlab {

// (p_after - p_before) / (1 - p_before)
inline double rewrite_score(double p_before, double p_after) {
  if (!(p_before >= 0.0 && p_before < 1.0))
    throw metric_error("rewrite score undefined for p_before = " + std::to_string(p_before));
  if (!(p_after >= 0.0 && p_after <= 1.0))
    throw metric_error("rewrite score: p_after = " + std::to_string(p_after) + " outside [0, 1]");
  return (p_after - p_before) / (1.0 - p_before);
}

// mean(u_i - v_i) over paired binary outcomes.
inline double delta_risk(std::span<const int> u, std::span<const int> v) {
  if (u.size() != v.size()) throw metric_error("delta_risk: outcome vectors differ in length");
  if (u.empty()) throw metric_error("delta_risk: empty note set");
  long long sum = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if ((u[i] != 0 && u[i] != 1) || (v[i] != 0 && v[i] != 1))
      throw metric_error("delta_risk: outcomes must be 0 or 1");
    sum += u[i] - v[i];
  }
  return static_cast<double>(sum) / static_cast<double>(u.size());
}

// exp(-mean(logprobs))
inline double perplexity(std::span<const double> logprobs) {
  if (logprobs.empty()) throw metric_error("perplexity: empty sequence");
  double sum = 0.0;
  for (double lp : logprobs) {
    if (!(lp <= 0.0)) throw metric_error("perplexity: log-probability " + std::to_string(lp) + " > 0");
    sum += lp;
  }
  return std::exp(-sum / static_cast<double>(logprobs.size()));
}

inline const std::string label_unstated = "unstated";
inline const std::string label_ambiguous = "ambiguous";

inline bool is_stated(const std::string& label) { return label != label_unstated && label != label_ambiguous; }

struct flip_result {
  double ratio = 0.0;
  std::size_t target = 0;
  std::size_t stated = 0;
  std::size_t excluded = 0;  // unstated or ambiguous
};

// Share of stated labels equal to `target`.
inline flip_result flip_ratio(std::span<const std::string> labels, const std::string& target) {
  if (labels.empty()) throw metric_error("flip_ratio: no records");
  flip_result r;
  for (const auto& l : labels) {
    if (!is_stated(l)) {
      ++r.excluded;
      continue;
    }
    ++r.stated;
    if (l == target) ++r.target;
  }
  if (r.stated == 0) throw metric_error("flip_ratio undefined: all " + std::to_string(labels.size()) + " records unstated");
  r.ratio = static_cast<double>(r.target) / static_cast<double>(r.stated);
  return r;
}

}  // namespace patchlab
