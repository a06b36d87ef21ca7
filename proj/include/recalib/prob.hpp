#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "recalib/errors.hpp"

namespace recalib {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Lower clip for log-probabilities: the log of the smallest positive normal
/// float32. Binary logits are clipped symmetrically to +/- this magnitude.
inline const double kLogitClip =
    std::log(static_cast<double>(std::numeric_limits<float>::min()));

/// Probability floor used by log-loss style evaluations, exp(kLogitClip).
inline const double kProbFloor = std::exp(kLogitClip);

inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(p / (1-p)) via log1p, clipped to [kLogitClip, -kLogitClip].
inline double binary_logit(double p) {
  const double t = std::log(p) - std::log1p(-p);
  return std::clamp(t, kLogitClip, -kLogitClip);
}

inline Vector binary_logit(const Vector& p) {
  Vector out(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    out[i] = binary_logit(p[i]);
  }
  return out;
}

/// Labels in {0, ..., k-1}.
class LabelVector {
 public:
  LabelVector(std::vector<int> labels, int num_classes)
      : labels_(std::move(labels)), k_(num_classes) {
    if (k_ < 2) {
      throw DimensionMismatch("LabelVector: need at least 2 classes");
    }
    for (int y : labels_) {
      if (y < 0 || y >= k_) {
        throw InvalidInput("LabelVector: label out of range");
      }
    }
  }

  int k() const { return k_; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(labels_.size()); }
  int operator[](Eigen::Index i) const { return labels_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& values() const { return labels_; }

 private:
  std::vector<int> labels_;
  int k_;
};

/// Row-stochastic matrix of predicted class probabilities. Rows whose sum
/// deviates from 1 by more than kRowSumTol are renormalized rather than
/// rejected (prediction dumps routinely carry float32 rounding);
/// renormalized_rows() reports how many were touched.
class ProbMatrix {
 public:
  static constexpr double kRowSumTol = 1e-6;
  static constexpr double kEntryTol = 1e-6;

  explicit ProbMatrix(Matrix values) : values_(std::move(values)) {
    if (values_.rows() < 1 || values_.cols() < 2) {
      throw DimensionMismatch("ProbMatrix: need n >= 1 rows and k >= 2 columns");
    }
    if (!values_.allFinite()) {
      throw InvalidInput("ProbMatrix: entries must be finite");
    }
    if ((values_.array() < -kEntryTol).any()) {
      throw InvalidInput("ProbMatrix: negative probability entry");
    }
    values_ = values_.cwiseMax(0.0);
    for (Eigen::Index i = 0; i < values_.rows(); ++i) {
      const double s = values_.row(i).sum();
      if (std::abs(s - 1.0) > kRowSumTol) {
        if (s <= 0.0) {
          throw InvalidInput("ProbMatrix: probability row sums to zero");
        }
        values_.row(i) /= s;
        ++renormalized_;
      }
    }
    values_ = values_.cwiseMin(1.0);
  }

  const Matrix& values() const { return values_; }
  Eigen::Index n() const { return values_.rows(); }
  int k() const { return static_cast<int>(values_.cols()); }
  Eigen::Index renormalized_rows() const { return renormalized_; }

 private:
  Matrix values_;
  Eigen::Index renormalized_ = 0;
};

/// Matrix of log-probability scores, all entries within the clip range.
/// `centered` records whether each row had its mean removed.
class LogitMatrix {
 public:
  /// Adopts raw scores (e.g. from a z_* prediction file): clips symmetrically
  /// to the logit range, never centered.
  static LogitMatrix from_raw(Matrix values) {
    if (values.hasNaN()) {
      throw InvalidInput("LogitMatrix: NaN entry");
    }
    values = values.cwiseMax(kLogitClip).cwiseMin(-kLogitClip);
    return LogitMatrix(std::move(values), false);
  }

  const Matrix& values() const { return values_; }
  bool centered() const { return centered_; }
  Eigen::Index n() const { return values_.rows(); }
  int k() const { return static_cast<int>(values_.cols()); }

 private:
  friend LogitMatrix logits_from_probs(const ProbMatrix&, bool);
  LogitMatrix(Matrix values, bool centered)
      : values_(std::move(values)), centered_(centered) {}

  Matrix values_;
  bool centered_;
};

namespace detail {

inline void softmax_rows_inplace(Matrix& z) {
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double m = z.row(i).maxCoeff();
    z.row(i) = (z.row(i).array() - m).exp();
    z.row(i) /= z.row(i).sum();
  }
}

inline Matrix softmax_rows(Matrix z) {
  softmax_rows_inplace(z);
  return z;
}

inline double log_sum_exp(const Eigen::Ref<const Vector>& z) {
  const double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

}  // namespace detail

/// Row-wise softmax with max-subtraction; invariant to per-row shifts.
inline ProbMatrix softmax_rows(const LogitMatrix& z) {
  return ProbMatrix(detail::softmax_rows(z.values()));
}

/// Entry-wise log of probabilities, clipped below at kLogitClip. Centering
/// (subtracting the row mean) happens after clipping so clipped rows still
/// sum to zero exactly.
inline LogitMatrix logits_from_probs(const ProbMatrix& p, bool center) {
  Matrix logits = p.values().array().log().max(kLogitClip).matrix();
  if (center) {
    const Vector row_means = logits.rowwise().mean();
    logits.colwise() -= row_means;
  }
  return LogitMatrix(std::move(logits), center);
}

}  // namespace recalib
