#pragma once

#include <algorithm>
#include <cmath>

#include "recalib/errors.hpp"
#include "recalib/prob.hpp"

namespace recalib {

struct EvalReport {
  double logloss = 0.0;
  double brier = 0.0;
  Eigen::Index n = 0;
  double per_sample_logloss_clip = kProbFloor;
};

namespace detail {

inline void check_pair(const ProbMatrix& p, const LabelVector& y) {
  if (p.n() != y.size() || p.k() != y.k()) {
    throw DimensionMismatch("metrics: probabilities and labels disagree");
  }
}

}  // namespace detail

/// Mean negative log probability of the observed label, floored at kProbFloor.
inline double logloss(const ProbMatrix& p, const LabelVector& y) {
  detail::check_pair(p, y);
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.n(); ++i) {
    total -= std::log(std::max(p.values()(i, y[i]), kProbFloor));
  }
  return total / static_cast<double>(p.n());
}

/// Mean squared distance to the one-hot label, summed over all k classes.
inline double brier(const ProbMatrix& p, const LabelVector& y) {
  detail::check_pair(p, y);
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.n(); ++i) {
    double row = p.values().row(i).squaredNorm();
    const double py = p.values()(i, y[i]);
    row += (py - 1.0) * (py - 1.0) - py * py;
    total += row;
  }
  return total / static_cast<double>(p.n());
}

inline EvalReport evaluate(const ProbMatrix& p, const LabelVector& y) {
  EvalReport r;
  r.logloss = logloss(p, y);
  r.brier = brier(p, y);
  r.n = p.n();
  r.per_sample_logloss_clip = kProbFloor;
  return r;
}

/// (after - before) / before, clipped to [-1, +1].
inline double relative_improvement(double before, double after) {
  if (!(before > 0.0)) {
    throw InvalidInput("relative_improvement: baseline must be positive");
  }
  return std::clamp((after - before) / before, -1.0, 1.0);
}

}  // namespace recalib
