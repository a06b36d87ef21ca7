#pragma once

#include <string>
#include <vector>

#include "recalib/gaussian.hpp"

namespace recalib {

inline std::vector<std::string> preset_names() {
  return {"binary-unequal-variance", "multiclass-equal-cov", "multiclass-unequal-cov",
          "many-class-small-n"};
}

/// Named synthetic problems used throughout the test harness. Each pairs a
/// miscalibrated classifier with class-conditional Gaussians whose exact
/// recalibration map is known.
inline GaussianMixtureSpec make_preset(const std::string& name) {
  GaussianMixtureSpec s;
  if (name == "binary-unequal-variance") {
    // Projected geometry m- = -1, m+ = 1, var- = 4, var+ = 1, equal priors.
    s.k = 2;
    s.d = 1;
    s.priors = Vector::Constant(2, 0.5);
    s.means.resize(2, 1);
    s.means << -1.0, 1.0;
    s.covariances = {Matrix::Constant(1, 1, 4.0), Matrix::Constant(1, 1, 1.0)};
    s.weight = Vector::Constant(1, 1.0);
  } else if (name == "multiclass-equal-cov" || name == "multiclass-unequal-cov") {
    s.k = 3;
    s.d = 2;
    s.means.resize(3, 2);
    s.means << 1.5, 0.0, -0.5, 0.9, -0.7, -1.1;
    if (name == "multiclass-equal-cov") {
      s.priors.resize(3);
      s.priors << 0.5, 0.3, 0.2;
      s.covariances = {Matrix::Identity(2, 2), Matrix::Identity(2, 2), Matrix::Identity(2, 2)};
      // Overconfident classifier that also ignores priors and mean norms.
      s.weights = 2.2 * s.means;
    } else {
      s.priors.resize(3);
      s.priors << 0.4, 0.35, 0.25;
      Matrix c1(2, 2), c2(2, 2);
      c1 << 2.0, 0.6, 0.6, 1.2;
      c2 << 0.5, -0.2, -0.2, 1.5;
      s.covariances = {Matrix::Identity(2, 2), c1, c2};
      s.weights = 1.8 * s.means;
    }
  } else if (name == "many-class-small-n") {
    // Ten overlapping classes with tilted priors, scored by a classifier that
    // is three times overconfident; the regime where unregularized matrix
    // scaling overfits small calibration sets.
    const int k = 10;
    s.k = k;
    s.d = k;
    s.priors.resize(k);
    for (int i = 0; i < k; ++i) s.priors[i] = 1.0 + 0.3 * i;
    s.priors /= s.priors.sum();
    s.means = Matrix::Identity(k, k);
    s.covariances.assign(static_cast<std::size_t>(k), Matrix::Identity(k, k));
    s.weights = 3.0 * Matrix::Identity(k, k);
  } else {
    throw InvalidInput("unknown preset: " + name);
  }
  s.validate();
  return s;
}

}  // namespace recalib
