#pragma once

// Test-side oracles, independent of the solver paths they check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "recalib/penalties.hpp"
#include "recalib/prob.hpp"
#include "recalib/saga.hpp"

namespace testsupport {

using recalib::Matrix;
using recalib::Vector;

// Brute-force scalar prox oracle: iteratively refined grid search over
// 0.5 (w - z)^2 + s * penalty(w). Grid search rather than golden section
// because the MCP objective can carry two local minima; long-double objective
// values because the argmin of a double-precision objective is only
// resolvable to about sqrt(eps) * scale, coarser than the 1e-8 target.
inline double brute_force_prox_1d(recalib::PenaltyFamily f, double z, double s, double gamma) {
  const auto pen = [&](long double w) -> long double {
    const long double a = w < 0 ? -w : w;
    switch (f) {
      case recalib::PenaltyFamily::kRidge: return w * w;
      case recalib::PenaltyFamily::kLasso: return a;
      case recalib::PenaltyFamily::kGroupLasso: return a;
      case recalib::PenaltyFamily::kMcp:
        return a <= gamma ? a - a * a / (2.0L * gamma) : gamma / 2.0L;
    }
    return 0.0L;
  };
  long double center = 0.0L;
  long double half_width = std::abs(z) + 1.0L;
  long double best_w = 0.0L;
  for (int round = 0; round < 5; ++round) {
    long double best = 1e300L;
    const int grid = 2000;
    for (int i = 0; i <= grid; ++i) {
      const long double w = center - half_width + 2.0L * half_width * i / grid;
      const long double obj = 0.5L * (w - z) * (w - z) + static_cast<long double>(s) * pen(w);
      if (obj < best) {
        best = obj;
        best_w = w;
      }
    }
    center = best_w;
    half_width = 4.0L * half_width / grid;
  }
  return static_cast<double>(best_w);
}

// The group-lasso prox reduces to a line search along z.
inline Vector brute_force_group_prox(const Vector& z, double s) {
  const double norm = z.norm();
  if (norm == 0.0) return Vector::Zero(z.size());
  long double center = 0.0L, half_width = norm;
  long double best_t = 0.0L;
  for (int round = 0; round < 5; ++round) {
    long double best = 1e300L;
    const int grid = 2000;
    for (int i = 0; i <= grid; ++i) {
      long double t = center - half_width + 2.0L * half_width * i / grid;
      if (t < 0.0L) t = 0.0L;
      const long double obj =
          0.5L * (t - norm) * (t - norm) + static_cast<long double>(s) * t;
      if (obj < best) {
        best = obj;
        best_t = t;
      }
    }
    center = best_t;
    half_width = 4.0L * half_width / grid;
  }
  return z * (static_cast<double>(best_t) / norm);
}

// Golden-section minimizer for 1-D unimodal objectives.
inline double golden_section_min(const std::function<double(double)>& f, double lo, double hi,
                                 double tol = 1e-10) {
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double x1 = b - phi * (b - a);
  double x2 = a + phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while (b - a > tol) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - phi * (b - a);
      f1 = f(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + phi * (b - a);
      f2 = f(x2);
    }
  }
  return 0.5 * (a + b);
}

// Full-batch composite objective, written independently of the solver module.
inline double reference_objective(const Matrix& x, const std::vector<int>& y,
                                  const recalib::saga::StructuredParams& p,
                                  const recalib::saga::ModelStructure& st,
                                  const recalib::saga::PenaltyMap& pm) {
  const int k = static_cast<int>(x.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Vector z = p.alpha * x.row(i).transpose();
    if (st.use_v) z += p.v.cwiseProduct(x.row(i).transpose());
    if (st.m_mask != recalib::saga::MatrixMask::kNone) {
      for (int r = 0; r < k; ++r) {
        for (int c = 0; c < k; ++c) {
          if (st.m_mask == recalib::saga::MatrixMask::kOffDiagonal && r == c) continue;
          z[r] += p.M(r, c) * x(i, c);
        }
      }
    }
    if (st.use_b) z += p.b;
    const double m = z.maxCoeff();
    loss += m + std::log((z.array() - m).exp().sum()) - z[y[static_cast<std::size_t>(i)]];
  }
  loss /= static_cast<double>(x.rows());
  if (st.use_b) {
    loss += recalib::penalty_value(pm.intercept.family, p.b, pm.intercept.weight,
                                   pm.intercept.mcp_gamma);
  }
  if (st.use_v) {
    loss += recalib::penalty_value(pm.diagonal.family, p.v, pm.diagonal.weight,
                                   pm.diagonal.mcp_gamma);
  }
  if (st.m_mask != recalib::saga::MatrixMask::kNone) {
    std::vector<double> entries;
    for (int r = 0; r < k; ++r) {
      for (int c = 0; c < k; ++c) {
        if (st.m_mask == recalib::saga::MatrixMask::kOffDiagonal && r == c) continue;
        entries.push_back(p.M(r, c));
      }
    }
    Vector mv = Eigen::Map<const Vector>(entries.data(), static_cast<Eigen::Index>(entries.size()));
    loss += recalib::penalty_value(pm.off_diagonal.family, mv, pm.off_diagonal.weight,
                                   pm.off_diagonal.mcp_gamma);
  }
  return loss;
}

struct ReferenceResult {
  recalib::saga::StructuredParams params;
  double objective = 0.0;
  int iterations = 0;
};

// Plain full-batch proximal gradient descent, run to a tight tolerance. Slow
// and simple on purpose: it is the oracle the incremental solver is checked
// against.
inline ReferenceResult reference_prox_solve(const Matrix& x, const std::vector<int>& y,
                                            recalib::saga::StructuredParams p,
                                            const recalib::saga::ModelStructure& st,
                                            const recalib::saga::PenaltyMap& pm,
                                            int max_iters = 400000, double tol = 1e-10) {
  using recalib::saga::MatrixMask;
  const Eigen::Index n = x.rows();
  const int k = static_cast<int>(x.cols());
  const double inv_n = 1.0 / static_cast<double>(n);

  double max_sq = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) max_sq = std::max(max_sq, x.row(i).squaredNorm());
  double lips = 0.5 * max_sq + 0.5;
  for (const auto* g : {&pm.intercept, &pm.diagonal, &pm.off_diagonal}) {
    if (g->family == recalib::PenaltyFamily::kRidge) lips = std::max(lips, 0.5 * max_sq + 2.0 * g->weight);
  }
  const double step = 1.0 / lips;

  Vector z(k), d(k);
  ReferenceResult out;
  for (int it = 0; it < max_iters; ++it) {
    double g_alpha = 0.0;
    Vector g_v = Vector::Zero(k);
    Matrix g_m = Matrix::Zero(k, k);
    Vector g_b = Vector::Zero(k);
    for (Eigen::Index i = 0; i < n; ++i) {
      z = p.alpha * x.row(i).transpose();
      if (st.use_v) z += p.v.cwiseProduct(x.row(i).transpose());
      if (st.m_mask != MatrixMask::kNone) {
        for (int r = 0; r < k; ++r) {
          for (int c = 0; c < k; ++c) {
            if (st.m_mask == MatrixMask::kOffDiagonal && r == c) continue;
            z[r] += p.M(r, c) * x(i, c);
          }
        }
      }
      if (st.use_b) z += p.b;
      const double m = z.maxCoeff();
      d = (z.array() - m).exp();
      d /= d.sum();
      d[y[static_cast<std::size_t>(i)]] -= 1.0;
      g_alpha += d.dot(x.row(i).transpose()) * inv_n;
      if (st.use_v) g_v += d.cwiseProduct(x.row(i).transpose()) * inv_n;
      if (st.m_mask != MatrixMask::kNone) g_m += d * x.row(i) * inv_n;
      if (st.use_b) g_b += d * inv_n;
    }

    double change = 0.0;
    const double alpha_new = p.alpha - step * g_alpha;
    change = std::max(change, std::abs(alpha_new - p.alpha));
    p.alpha = alpha_new;
    if (st.use_v) {
      Vector v_new = p.v - step * g_v;
      recalib::prox_block(pm.diagonal.family, v_new, step * pm.diagonal.weight,
                          pm.diagonal.mcp_gamma);
      change = std::max(change, (v_new - p.v).lpNorm<Eigen::Infinity>());
      p.v = v_new;
    }
    if (st.m_mask != MatrixMask::kNone) {
      std::vector<double> entries;
      std::vector<std::pair<int, int>> coords;
      for (int r = 0; r < k; ++r) {
        for (int c = 0; c < k; ++c) {
          if (st.m_mask == MatrixMask::kOffDiagonal && r == c) continue;
          entries.push_back(p.M(r, c) - step * g_m(r, c));
          coords.emplace_back(r, c);
        }
      }
      Vector mv = Eigen::Map<const Vector>(entries.data(),
                                           static_cast<Eigen::Index>(entries.size()));
      recalib::prox_block(pm.off_diagonal.family, mv, step * pm.off_diagonal.weight,
                          pm.off_diagonal.mcp_gamma);
      for (std::size_t e = 0; e < coords.size(); ++e) {
        const double m_new = mv[static_cast<Eigen::Index>(e)];
        change = std::max(change, std::abs(m_new - p.M(coords[e].first, coords[e].second)));
        p.M(coords[e].first, coords[e].second) = m_new;
      }
    }
    if (st.use_b) {
      Vector b_new = p.b - step * g_b;
      recalib::prox_block(pm.intercept.family, b_new, step * pm.intercept.weight,
                          pm.intercept.mcp_gamma);
      change = std::max(change, (b_new - p.b).lpNorm<Eigen::Infinity>());
      p.b = b_new;
    }
    out.iterations = it + 1;
    if (change < tol) break;
  }
  out.objective = reference_objective(x, y, p, st, pm);
  out.params = std::move(p);
  return out;
}

// Max deviation between mean confidence and accuracy over `bins` equal-mass
// bins of the max-class probability.
inline double reliability_max_deviation(const Matrix& posterior, const std::vector<int>& labels,
                                        int bins = 20) {
  const Eigen::Index n = posterior.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> conf(static_cast<std::size_t>(n));
  std::vector<int> correct(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index argmax;
    conf[static_cast<std::size_t>(i)] = posterior.row(i).maxCoeff(&argmax);
    correct[static_cast<std::size_t>(i)] =
        labels[static_cast<std::size_t>(i)] == static_cast<int>(argmax) ? 1 : 0;
  }
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index a, Eigen::Index b) {
              return conf[static_cast<std::size_t>(a)] < conf[static_cast<std::size_t>(b)];
            });
  double worst = 0.0;
  for (int b = 0; b < bins; ++b) {
    const Eigen::Index start = n * b / bins;
    const Eigen::Index stop = n * (b + 1) / bins;
    if (stop <= start) continue;
    double mean_conf = 0.0, mean_acc = 0.0;
    for (Eigen::Index i = start; i < stop; ++i) {
      mean_conf += conf[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
      mean_acc += correct[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    }
    const double m = static_cast<double>(stop - start);
    worst = std::max(worst, std::abs(mean_conf / m - mean_acc / m));
  }
  return worst;
}

}  // namespace testsupport
