#pragma once

#include <json.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "recalib/errors.hpp"
#include "recalib/prob.hpp"
#include "recalib/random.hpp"

namespace recalib {

/// Class priors, Gaussian class-conditional features and a fixed linear
/// classifier; together these define a synthetic calibration problem whose
/// exact Bayes recalibration map is computable in closed form.
struct GaussianMixtureSpec {
  int k = 0;
  int d = 0;
  Vector priors;                     // k, on the simplex
  Matrix means;                      // k x d
  std::vector<Matrix> covariances;   // k matrices, d x d, symmetric PSD
  Matrix weights;                    // k x d classifier (multiclass); empty for binary
  Vector weight;                     // d classifier (binary); empty for multiclass

  bool binary() const { return weight.size() > 0; }

  void validate() const {
    if (k < 2 || d < 1) throw InvalidInput("GaussianMixtureSpec: need k >= 2, d >= 1");
    if (priors.size() != k) throw DimensionMismatch("GaussianMixtureSpec: priors size");
    if ((priors.array() < 0.0).any() || std::abs(priors.sum() - 1.0) > 1e-9) {
      throw InvalidInput("GaussianMixtureSpec: priors must lie on the simplex");
    }
    if (means.rows() != k || means.cols() != d) {
      throw DimensionMismatch("GaussianMixtureSpec: means must be k x d");
    }
    if (static_cast<int>(covariances.size()) != k) {
      throw DimensionMismatch("GaussianMixtureSpec: one covariance per class");
    }
    for (const Matrix& cov : covariances) {
      if (cov.rows() != d || cov.cols() != d) {
        throw DimensionMismatch("GaussianMixtureSpec: covariance must be d x d");
      }
      if ((cov - cov.transpose()).lpNorm<Eigen::Infinity>() > 1e-9) {
        throw InvalidInput("GaussianMixtureSpec: covariance not symmetric");
      }
      Eigen::SelfAdjointEigenSolver<Matrix> eig(cov, Eigen::EigenvaluesOnly);
      const double scale = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
      if (eig.eigenvalues().minCoeff() < -1e-9 * scale) {
        throw InvalidInput("GaussianMixtureSpec: covariance not positive semidefinite");
      }
    }
    const bool has_w = weights.size() > 0;
    const bool has_binary = weight.size() > 0;
    if (has_w == has_binary) {
      throw InvalidInput("GaussianMixtureSpec: exactly one of weights/weight required");
    }
    if (has_binary && (k != 2 || weight.size() != d)) {
      throw InvalidInput("GaussianMixtureSpec: binary weight needs k = 2 and size d");
    }
    if (has_w && (weights.rows() != k || weights.cols() != d)) {
      throw DimensionMismatch("GaussianMixtureSpec: weights must be k x d");
    }
  }
};

inline void to_json(nlohmann::json& j, const GaussianMixtureSpec& s) {
  j = nlohmann::json{{"k", s.k}, {"d", s.d}};
  j["priors"] = std::vector<double>(s.priors.data(), s.priors.data() + s.priors.size());
  nlohmann::json means = nlohmann::json::array();
  for (int i = 0; i < s.k; ++i) {
    means.push_back(std::vector<double>(s.means.row(i).begin(), s.means.row(i).end()));
  }
  j["means"] = means;
  nlohmann::json covs = nlohmann::json::array();
  for (const Matrix& cov : s.covariances) {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(s.d) * s.d);
    for (int r = 0; r < s.d; ++r) {
      for (int c = 0; c < s.d; ++c) flat.push_back(cov(r, c));
    }
    covs.push_back(flat);
  }
  j["covariances"] = covs;
  if (s.binary()) {
    j["weight"] = std::vector<double>(s.weight.data(), s.weight.data() + s.weight.size());
  } else {
    nlohmann::json w = nlohmann::json::array();
    for (int i = 0; i < s.k; ++i) {
      w.push_back(std::vector<double>(s.weights.row(i).begin(), s.weights.row(i).end()));
    }
    j["weights"] = w;
  }
}

inline void from_json(const nlohmann::json& j, GaussianMixtureSpec& s) {
  s.k = j.at("k").get<int>();
  s.d = j.at("d").get<int>();
  const auto priors = j.at("priors").get<std::vector<double>>();
  s.priors = Eigen::Map<const Vector>(priors.data(), static_cast<Eigen::Index>(priors.size()));
  const auto means = j.at("means").get<std::vector<std::vector<double>>>();
  s.means.resize(static_cast<Eigen::Index>(means.size()), s.d);
  for (std::size_t i = 0; i < means.size(); ++i) {
    if (static_cast<int>(means[i].size()) != s.d) throw ParseError("spec: malformed means");
    s.means.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Vector>(means[i].data(), s.d).transpose();
  }
  s.covariances.clear();
  for (const auto& flat : j.at("covariances").get<std::vector<std::vector<double>>>()) {
    if (static_cast<int>(flat.size()) != s.d * s.d) throw ParseError("spec: malformed covariance");
    Matrix cov(s.d, s.d);
    for (int r = 0; r < s.d; ++r) {
      for (int c = 0; c < s.d; ++c) cov(r, c) = flat[static_cast<std::size_t>(r) * s.d + c];
    }
    s.covariances.push_back(std::move(cov));
  }
  s.weights.resize(0, 0);
  s.weight.resize(0);
  if (j.contains("weight")) {
    const auto w = j.at("weight").get<std::vector<double>>();
    s.weight = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
  }
  if (j.contains("weights")) {
    const auto w = j.at("weights").get<std::vector<std::vector<double>>>();
    s.weights.resize(static_cast<Eigen::Index>(w.size()), s.d);
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (static_cast<int>(w[i].size()) != s.d) throw ParseError("spec: malformed weights");
      s.weights.row(static_cast<Eigen::Index>(i)) =
          Eigen::Map<const Vector>(w[i].data(), s.d).transpose();
    }
  }
  s.validate();
}

struct SampleSet {
  ProbMatrix probs;
  LabelVector labels;
  Matrix raw_logits;  // n x k classifier scores; binary rows are (0, w'x)
};

struct MonteCarloEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::int64_t n = 0;
};

/// Quadratic-in-logit Bayes recalibration coefficients for the binary model,
/// together with the projected one-dimensional class geometry.
struct BinaryOracle {
  double a = 0.0, b = 0.0, c = 0.0;
  double m_plus = 0.0, m_minus = 0.0;
  double var_plus = 0.0, var_minus = 0.0;
  double pi_plus = 0.0, pi_minus = 0.0;

  double posterior_positive(double t) const { return sigmoid((a * t + b) * t + c); }
};

/// Bayes posterior  softmax(x'Ax + Bx + C)  on centered logits, with
/// A[i] = -sigma_i^+/2 stored as the pseudo-inverse stack.
struct MulticlassOracle {
  int k = 0;
  Matrix means;                     // row i = m_i, centered class logit mean
  std::vector<Matrix> sigma;        // centered class logit covariances (rank <= k-1)
  std::vector<Matrix> sigma_pinv;
  std::vector<double> log_pdet;     // log pseudo-determinants
  Matrix B;                         // row i = m_i' sigma_i^+
  Vector C;
  bool quad_constant = false;       // equal covariances: quadratic term drops out

  Vector posterior(const Eigen::Ref<const Vector>& raw_logits) const {
    Vector x = raw_logits.array() - raw_logits.mean();
    Vector s(k);
    for (int i = 0; i < k; ++i) {
      s[i] = -0.5 * x.dot(sigma_pinv[static_cast<std::size_t>(i)] * x) + B.row(i).dot(x) + C[i];
    }
    const double m = s.maxCoeff();
    s = (s.array() - m).exp();
    s /= s.sum();
    return s;
  }

  Matrix posterior_rows(const Matrix& raw_logits) const {
    Matrix out(raw_logits.rows(), k);
    for (Eigen::Index i = 0; i < raw_logits.rows(); ++i) {
      out.row(i) = posterior(raw_logits.row(i).transpose()).transpose();
    }
    return out;
  }
};

namespace detail {

// Square roots of the class covariances (transform T with T T' = Sigma):
// Cholesky when positive definite, eigen decomposition otherwise.
inline std::vector<Matrix> covariance_roots(const GaussianMixtureSpec& spec) {
  std::vector<Matrix> roots;
  roots.reserve(static_cast<std::size_t>(spec.k));
  for (const Matrix& cov : spec.covariances) {
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() == Eigen::Success) {
      roots.push_back(llt.matrixL());
      continue;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    const Vector vals = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    roots.push_back(eig.eigenvectors() * vals.asDiagonal());
  }
  return roots;
}

inline int draw_label(const Vector& priors, std::mt19937_64& gen) {
  const double u = rng::uniform01(gen);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < priors.size(); ++i) {
    acc += priors[i];
    if (u <= acc) return static_cast<int>(i);
  }
  return static_cast<int>(priors.size() - 1);
}

inline Vector draw_features(const GaussianMixtureSpec& spec, const std::vector<Matrix>& roots,
                            int label, std::mt19937_64& gen) {
  Vector g(spec.d);
  for (int j = 0; j < spec.d; ++j) g[j] = rng::standard_normal(gen);
  return spec.means.row(label).transpose() + roots[static_cast<std::size_t>(label)] * g;
}

inline Vector classifier_logits(const GaussianMixtureSpec& spec, const Vector& x) {
  if (spec.binary()) {
    Vector z(2);
    z << 0.0, spec.weight.dot(x);
    return z;
  }
  return spec.weights * x;
}

}  // namespace detail

/// Draws (X, Y) from the mixture and pushes X through the fixed classifier.
/// Deterministic for a fixed seed.
inline SampleSet sample(const GaussianMixtureSpec& spec, Eigen::Index n, std::uint64_t seed) {
  spec.validate();
  if (n < 1) throw InvalidInput("sample: need n >= 1");
  const std::vector<Matrix> roots = detail::covariance_roots(spec);
  std::mt19937_64 gen(seed);
  Matrix logits(n, spec.k);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = detail::draw_label(spec.priors, gen);
    labels[static_cast<std::size_t>(i)] = y;
    const Vector x = detail::draw_features(spec, roots, y, gen);
    logits.row(i) = detail::classifier_logits(spec, x).transpose();
  }
  Matrix probs = detail::softmax_rows(logits);
  return SampleSet{ProbMatrix(std::move(probs)), LabelVector(std::move(labels), spec.k),
                   std::move(logits)};
}

/// Closed-form quadratic recalibration coefficients for a binary spec:
/// project the class geometry onto the classifier direction and apply Bayes.
inline BinaryOracle binary_oracle(const GaussianMixtureSpec& spec) {
  spec.validate();
  if (!spec.binary()) throw InvalidInput("binary_oracle: spec is not binary");
  BinaryOracle o;
  o.m_minus = spec.weight.dot(spec.means.row(0).transpose());
  o.m_plus = spec.weight.dot(spec.means.row(1).transpose());
  o.var_minus = spec.weight.dot(spec.covariances[0] * spec.weight);
  o.var_plus = spec.weight.dot(spec.covariances[1] * spec.weight);
  if (!(o.var_plus > 0.0) || !(o.var_minus > 0.0)) {
    throw DegenerateInput("binary_oracle: projected class variances must be positive");
  }
  o.pi_minus = spec.priors[0];
  o.pi_plus = spec.priors[1];
  o.a = 1.0 / (2.0 * o.var_minus) - 1.0 / (2.0 * o.var_plus);
  o.b = o.m_plus / o.var_plus - o.m_minus / o.var_minus;
  o.c = std::log(o.pi_plus * std::sqrt(o.var_minus) / (o.pi_minus * std::sqrt(o.var_plus))) +
        o.m_minus * o.m_minus / (2.0 * o.var_minus) - o.m_plus * o.m_plus / (2.0 * o.var_plus);
  return o;
}

/// Bayes map on centered classifier logits. The centered class covariances
/// are singular by construction (rank <= k-1), so the density uses the
/// Moore-Penrose pseudo-inverse with an SVD cutoff of 1e-10 * sigma_max and
/// the log pseudo-determinant summed over the retained singular values.
inline MulticlassOracle multiclass_oracle(const GaussianMixtureSpec& spec) {
  spec.validate();
  const int k = spec.k;
  Matrix classifier = spec.weights;
  if (spec.binary()) {
    classifier = Matrix::Zero(2, spec.d);
    classifier.row(1) = spec.weight.transpose();
  }
  const Matrix center = Matrix::Identity(k, k) - Matrix::Constant(k, k, 1.0 / k);
  const Matrix cw = center * classifier;

  MulticlassOracle o;
  o.k = k;
  o.means.resize(k, k);
  o.B.resize(k, k);
  o.C.resize(k);
  for (int i = 0; i < k; ++i) {
    const Vector m = cw * spec.means.row(i).transpose();
    const Matrix cov = cw * spec.covariances[static_cast<std::size_t>(i)] * cw.transpose();
    Eigen::JacobiSVD<Matrix> svd(cov, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector sv = svd.singularValues();
    const double cutoff = 1e-10 * sv.maxCoeff();
    Matrix pinv = Matrix::Zero(k, k);
    double log_pdet = 0.0;
    int rank = 0;
    for (int j = 0; j < sv.size(); ++j) {
      if (sv[j] > cutoff && sv[j] > 0.0) {
        pinv.noalias() += svd.matrixV().col(j) * svd.matrixU().col(j).transpose() / sv[j];
        log_pdet += std::log(sv[j]);
        ++rank;
      }
    }
    if (rank == 0) {
      throw DegenerateInput("multiclass_oracle: class logit covariance has rank 0");
    }
    o.means.row(i) = m.transpose();
    o.sigma.push_back(cov);
    o.sigma_pinv.push_back(std::move(pinv));
    o.log_pdet.push_back(log_pdet);
    o.B.row(i) = (o.sigma_pinv.back() * m).transpose();
    o.C[i] = -0.5 * m.dot(o.sigma_pinv.back() * m) + std::log(spec.priors[i]) - 0.5 * log_pdet;
  }

  double max_diff = 0.0;
  double scale = 0.0;
  for (int i = 0; i < k; ++i) {
    scale = std::max(scale, o.sigma[static_cast<std::size_t>(i)].lpNorm<Eigen::Infinity>());
    for (int j = i + 1; j < k; ++j) {
      max_diff = std::max(max_diff, (o.sigma[static_cast<std::size_t>(i)] -
                                     o.sigma[static_cast<std::size_t>(j)])
                                        .lpNorm<Eigen::Infinity>());
    }
  }
  o.quad_constant = max_diff <= 1e-9 * std::max(1.0, scale);
  return o;
}

/// Monte-Carlo estimate of the log loss of the exact Bayes posterior on fresh
/// samples; the irreducible loss any fitted calibrator is measured against.
inline MonteCarloEstimate bayes_logloss(const GaussianMixtureSpec& spec, std::int64_t n_mc,
                                        std::uint64_t seed) {
  spec.validate();
  if (n_mc < 10000) throw InvalidInput("bayes_logloss: need n_mc >= 10^4");
  const std::vector<Matrix> roots = detail::covariance_roots(spec);
  const bool use_binary = spec.binary();
  BinaryOracle bo;
  MulticlassOracle mo;
  if (use_binary) {
    bo = binary_oracle(spec);
  } else {
    mo = multiclass_oracle(spec);
  }

  std::mt19937_64 gen(seed);
  // Welford accumulation; the naive sum-of-squares cancels catastrophically
  // when the per-sample losses are (near-)constant.
  double mean = 0.0, m2 = 0.0;
  for (std::int64_t i = 0; i < n_mc; ++i) {
    const int y = detail::draw_label(spec.priors, gen);
    const Vector x = detail::draw_features(spec, roots, y, gen);
    double q_y;
    if (use_binary) {
      const double s = bo.posterior_positive(spec.weight.dot(x));
      q_y = y == 1 ? s : 1.0 - s;
    } else {
      const Vector q = mo.posterior(spec.weights * x);
      q_y = q[y];
    }
    const double l = -std::log(std::max(q_y, kProbFloor));
    const double delta = l - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (l - mean);
  }
  MonteCarloEstimate est;
  est.n = n_mc;
  est.value = mean;
  const double var = n_mc > 1 ? m2 / static_cast<double>(n_mc - 1) : 0.0;
  est.std_error = std::sqrt(std::max(0.0, var) / static_cast<double>(n_mc));
  return est;
}

}  // namespace recalib
