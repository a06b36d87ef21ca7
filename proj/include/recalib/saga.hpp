#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "recalib/errors.hpp"
#include "recalib/penalties.hpp"
#include "recalib/prob.hpp"
#include "recalib/random.hpp"

namespace recalib::saga {

struct SolverConfig {
  enum class Shuffle { kEveryEpoch, kOnce };

  double step_size = 0.0;  // <= 0 means auto
  int max_epochs = 500;
  double tol = 1e-7;  // max absolute parameter change per epoch
  std::uint64_t seed = 0;
  Shuffle shuffle = Shuffle::kEveryEpoch;

  void validate() const {
    if (max_epochs < 1) throw InvalidInput("SolverConfig: max_epochs >= 1 required");
    if (!(tol > 0.0)) throw InvalidInput("SolverConfig: tol must be positive");
  }
};

struct SolveReport {
  int epochs_run = 0;
  double final_objective = 0.0;
  bool converged = false;
  std::vector<double> objective_trace;
};

/// Parameters of the structured logit map  z -> (alpha*I + diag(v) + mask.M) z + b.
struct StructuredParams {
  double alpha = 1.0;
  Vector v;
  Matrix M;
  Vector b;

  static StructuredParams zeros(int k, double alpha0 = 1.0) {
    StructuredParams p;
    p.alpha = alpha0;
    p.v = Vector::Zero(k);
    p.M = Matrix::Zero(k, k);
    p.b = Vector::Zero(k);
    return p;
  }
};

enum class MatrixMask { kNone, kOffDiagonal, kFull };

/// Which parameter groups exist in the model. The global scale alpha is always
/// present and never penalized.
struct ModelStructure {
  bool use_v = true;
  bool use_b = true;
  MatrixMask m_mask = MatrixMask::kNone;
};

struct GroupPenalty {
  PenaltyFamily family = PenaltyFamily::kRidge;
  double weight = 0.0;
  double mcp_gamma = 3.0;
};

struct PenaltyMap {
  GroupPenalty intercept;
  GroupPenalty diagonal;
  GroupPenalty off_diagonal;
};

namespace detail {

inline int active_matrix_entries(MatrixMask mask, int k) {
  switch (mask) {
    case MatrixMask::kNone: return 0;
    case MatrixMask::kOffDiagonal: return k * (k - 1);
    case MatrixMask::kFull: return k * k;
  }
  return 0;
}

inline void gather_matrix(MatrixMask mask, const Matrix& m, Vector& out) {
  const int k = static_cast<int>(m.rows());
  int idx = 0;
  for (int r = 0; r < k; ++r) {
    for (int c = 0; c < k; ++c) {
      if (mask == MatrixMask::kOffDiagonal && r == c) continue;
      out[idx++] = m(r, c);
    }
  }
}

inline void scatter_matrix(MatrixMask mask, const Vector& in, Matrix& m) {
  const int k = static_cast<int>(m.rows());
  int idx = 0;
  for (int r = 0; r < k; ++r) {
    for (int c = 0; c < k; ++c) {
      if (mask == MatrixMask::kOffDiagonal && r == c) continue;
      m(r, c) = in[idx++];
    }
  }
}

// z = (alpha*I + diag(v) + mask.M) x + b
inline void transform_row(const StructuredParams& p, const ModelStructure& s,
                          const Eigen::Ref<const Vector>& x, Vector& z) {
  z = p.alpha * x;
  if (s.use_v) z += p.v.cwiseProduct(x);
  if (s.m_mask != MatrixMask::kNone) {
    z.noalias() += p.M * x;
    if (s.m_mask == MatrixMask::kOffDiagonal) {
      z -= p.M.diagonal().cwiseProduct(x);
    }
  }
  if (s.use_b) z += p.b;
}

// d = softmax(z) - e_y; the stored per-sample gradient summary
inline void loss_summary(const StructuredParams& p, const ModelStructure& s,
                         const Eigen::Ref<const Vector>& x, int y, Vector& z, Vector& d) {
  transform_row(p, s, x, z);
  const double m = z.maxCoeff();
  d = (z.array() - m).exp();
  d /= d.sum();
  d[y] -= 1.0;
}

inline bool params_finite(const StructuredParams& p) {
  return std::isfinite(p.alpha) && p.v.allFinite() && p.M.allFinite() && p.b.allFinite();
}

}  // namespace detail

/// Mean softmax log loss over the data plus the per-group penalties; the
/// quantity solve() minimizes.
inline double composite_objective(const Matrix& features, const std::vector<int>& labels,
                                  const StructuredParams& params, const ModelStructure& structure,
                                  const PenaltyMap& penalties) {
  const Eigen::Index n = features.rows();
  Vector z(features.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    detail::transform_row(params, structure, features.row(i).transpose(), z);
    loss += recalib::detail::log_sum_exp(z) - z[labels[static_cast<std::size_t>(i)]];
  }
  loss /= static_cast<double>(n);
  if (structure.use_b) {
    loss += penalty_value(penalties.intercept.family, params.b, penalties.intercept.weight,
                          penalties.intercept.mcp_gamma);
  }
  if (structure.use_v) {
    loss += penalty_value(penalties.diagonal.family, params.v, penalties.diagonal.weight,
                          penalties.diagonal.mcp_gamma);
  }
  const int m_active = detail::active_matrix_entries(structure.m_mask,
                                                     static_cast<int>(features.cols()));
  if (m_active > 0) {
    Vector mvec(m_active);
    detail::gather_matrix(structure.m_mask, params.M, mvec);
    loss += penalty_value(penalties.off_diagonal.family, mvec, penalties.off_diagonal.weight,
                          penalties.off_diagonal.mcp_gamma);
  }
  return loss;
}

/// Step size 1/(3 L) with L = 0.5 max_i ||x_i||^2 plus the largest ridge
/// curvature among the penalized groups, capped at 1.
inline double auto_step_size(const Matrix& features, const PenaltyMap& penalties = {}) {
  double max_sq = 0.0;
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    max_sq = std::max(max_sq, features.row(i).squaredNorm());
  }
  double lips = 0.5 * max_sq;
  double ridge_curv = 0.0;
  for (const GroupPenalty* g : {&penalties.intercept, &penalties.diagonal, &penalties.off_diagonal}) {
    if (g->family == PenaltyFamily::kRidge) {
      ridge_curv = std::max(ridge_curv, 2.0 * g->weight);
    }
  }
  lips += ridge_curv;
  if (lips <= 0.0) {
    return 1.0;
  }
  return std::min(1.0 / (3.0 * lips), 1.0);
}

namespace detail {

struct Workspace {
  Vector z, d_new, delta, grad_v, grad_b, m_scratch, m_grad;
};

inline std::pair<StructuredParams, SolveReport> run(
    const Matrix& features, const std::vector<int>& labels, const StructuredParams& init,
    const ModelStructure& structure, const PenaltyMap& penalties, const SolverConfig& config,
    double step) {
  const Eigen::Index n = features.rows();
  const int k = static_cast<int>(features.cols());
  const double inv_n = 1.0 / static_cast<double>(n);
  const int m_active = active_matrix_entries(structure.m_mask, k);

  std::mt19937_64 gen(config.seed);
  StructuredParams params = init;

  // Gradient table: one k-vector summary per sample. The full per-sample
  // gradient factors as the outer product of the summary with the feature
  // row, so only the averages below need parameter-shaped storage.
  Matrix table(n, k);
  double avg_alpha = 0.0;
  Vector avg_v = Vector::Zero(k);
  Matrix avg_m = Matrix::Zero(k, k);
  Vector avg_b = Vector::Zero(k);

  Workspace w;
  w.z.resize(k);
  w.d_new.resize(k);
  w.delta.resize(k);
  w.grad_v.resize(k);
  w.grad_b.resize(k);
  if (m_active > 0) {
    w.m_scratch.resize(m_active);
    w.m_grad.resize(m_active);
  }

  for (Eigen::Index i = 0; i < n; ++i) {
    loss_summary(params, structure, features.row(i).transpose(), labels[static_cast<std::size_t>(i)],
                 w.z, w.d_new);
    table.row(i) = w.d_new.transpose();
    avg_alpha += w.d_new.dot(features.row(i).transpose()) * inv_n;
    if (structure.use_v) avg_v += w.d_new.cwiseProduct(features.row(i).transpose()) * inv_n;
    if (m_active > 0) avg_m.noalias() += (w.d_new * features.row(i)) * inv_n;
    if (structure.use_b) avg_b += w.d_new * inv_n;
  }

  double best_obj = composite_objective(features, labels, init, structure, penalties);
  if (!std::isfinite(best_obj)) {
    throw NonFiniteError("saga: objective not finite at the starting point");
  }
  StructuredParams best = init;

  SolveReport report;
  std::vector<int> order;
  if (config.shuffle == SolverConfig::Shuffle::kOnce) {
    order = rng::permutation(static_cast<int>(n), gen);
  }

  StructuredParams snapshot = params;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    if (config.shuffle == SolverConfig::Shuffle::kEveryEpoch) {
      order = rng::permutation(static_cast<int>(n), gen);
    }
    snapshot = params;
    for (int j : order) {
      const auto x = features.row(j).transpose();
      const int y = labels[static_cast<std::size_t>(j)];
      loss_summary(params, structure, x, y, w.z, w.d_new);
      w.delta = w.d_new - table.row(j).transpose();

      // alpha: plain stochastic step, never passed through a prox
      const double g_alpha = w.delta.dot(x) + avg_alpha;
      params.alpha -= step * g_alpha;

      if (structure.use_v) {
        w.grad_v = w.delta.cwiseProduct(x) + avg_v;
        params.v -= step * w.grad_v;
        prox_block(penalties.diagonal.family, params.v, step * penalties.diagonal.weight,
                   penalties.diagonal.mcp_gamma);
      }
      if (m_active > 0) {
        gather_matrix(structure.m_mask, params.M, w.m_scratch);
        int idx = 0;
        for (int r = 0; r < k; ++r) {
          const double dr = w.delta[r];
          for (int c = 0; c < k; ++c) {
            if (structure.m_mask == MatrixMask::kOffDiagonal && r == c) continue;
            w.m_grad[idx] = dr * x[c] + avg_m(r, c);
            ++idx;
          }
        }
        w.m_scratch -= step * w.m_grad;
        prox_block(penalties.off_diagonal.family, w.m_scratch,
                   step * penalties.off_diagonal.weight, penalties.off_diagonal.mcp_gamma);
        scatter_matrix(structure.m_mask, w.m_scratch, params.M);
      }
      if (structure.use_b) {
        w.grad_b = w.delta + avg_b;
        params.b -= step * w.grad_b;
        prox_block(penalties.intercept.family, params.b, step * penalties.intercept.weight,
                   penalties.intercept.mcp_gamma);
      }

      // refresh the table entry and the running averages
      avg_alpha += w.delta.dot(x) * inv_n;
      if (structure.use_v) avg_v += w.delta.cwiseProduct(x) * inv_n;
      if (m_active > 0) avg_m.noalias() += (w.delta * x.transpose()) * inv_n;
      if (structure.use_b) avg_b += w.delta * inv_n;
      table.row(j) = w.d_new.transpose();
    }

    const double obj = composite_objective(features, labels, params, structure, penalties);
    if (!std::isfinite(obj) || !params_finite(params)) {
      throw NonFiniteError("saga: objective became non-finite (step size too large)");
    }
    report.objective_trace.push_back(obj);
    if (obj < best_obj) {
      best_obj = obj;
      best = params;
    }

    double change = std::abs(params.alpha - snapshot.alpha);
    if (structure.use_v) {
      change = std::max(change, (params.v - snapshot.v).lpNorm<Eigen::Infinity>());
    }
    if (m_active > 0) {
      change = std::max(change, (params.M - snapshot.M).lpNorm<Eigen::Infinity>());
    }
    if (structure.use_b) {
      change = std::max(change, (params.b - snapshot.b).lpNorm<Eigen::Infinity>());
    }
    if (change < config.tol) {
      report.converged = true;
      break;
    }
  }

  report.epochs_run = static_cast<int>(report.objective_trace.size());
  report.final_objective = best_obj;
  return {std::move(best), std::move(report)};
}

}  // namespace detail

/// SAGA with per-sample gradient summaries and proximal penalty steps.
/// The sampling order is a seeded permutation, reshuffled per epoch or fixed
/// once depending on config.shuffle; runs are deterministic for a fixed seed.
/// Returns the best epoch-end iterate (never worse than the starting point).
/// A non-finite objective triggers one retry at a tenth of the step size.
inline std::pair<StructuredParams, SolveReport> solve(
    const Matrix& features, const std::vector<int>& labels, const StructuredParams& init,
    const ModelStructure& structure, const PenaltyMap& penalties, const SolverConfig& config) {
  config.validate();
  const Eigen::Index n = features.rows();
  const int k = static_cast<int>(features.cols());
  if (n < 1 || k < 2) {
    throw DimensionMismatch("saga: need n >= 1 samples and k >= 2 classes");
  }
  if (static_cast<Eigen::Index>(labels.size()) != n) {
    throw DimensionMismatch("saga: label count does not match feature rows");
  }
  for (int y : labels) {
    if (y < 0 || y >= k) throw InvalidInput("saga: label out of range");
  }
  if (!features.allFinite()) {
    throw InvalidInput("saga: features must be finite");
  }
  if (init.v.size() != k || init.b.size() != k || init.M.rows() != k || init.M.cols() != k) {
    throw DimensionMismatch("saga: initial parameters sized for a different k");
  }

  const double step0 = config.step_size > 0.0 ? config.step_size
                                              : auto_step_size(features, penalties);
  try {
    return detail::run(features, labels, init, structure, penalties, config, step0);
  } catch (const NonFiniteError&) {
    return detail::run(features, labels, init, structure, penalties, config, step0 / 10.0);
  }
}

inline std::pair<StructuredParams, SolveReport> solve(
    const LogitMatrix& data, const LabelVector& labels, const StructuredParams& init,
    const ModelStructure& structure, const PenaltyMap& penalties, const SolverConfig& config) {
  return solve(data.values(), labels.values(), init, structure, penalties, config);
}

}  // namespace recalib::saga
