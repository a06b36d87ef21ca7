#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "recalib/errors.hpp"
#include "recalib/prob.hpp"

namespace recalib {

enum class PenaltyFamily { kRidge, kLasso, kGroupLasso, kMcp };

inline std::string to_string(PenaltyFamily f) {
  switch (f) {
    case PenaltyFamily::kRidge: return "ridge";
    case PenaltyFamily::kLasso: return "lasso";
    case PenaltyFamily::kGroupLasso: return "group-lasso";
    case PenaltyFamily::kMcp: return "mcp";
  }
  return "ridge";
}

inline PenaltyFamily penalty_family_from_string(const std::string& s) {
  if (s == "ridge") return PenaltyFamily::kRidge;
  if (s == "lasso") return PenaltyFamily::kLasso;
  if (s == "group-lasso") return PenaltyFamily::kGroupLasso;
  if (s == "mcp") return PenaltyFamily::kMcp;
  throw InvalidInput("unknown penalty family: " + s);
}

/// Penalty family plus the exponents and group weights of the structured
/// regularization scheme. With everything at 1 the intercept/diagonal groups
/// carry weight k/n_cal and the off-diagonal group k(k-1)/n_cal.
struct PenaltySpec {
  PenaltyFamily family = PenaltyFamily::kRidge;
  double rho = 1.0;
  double tau = 1.0;
  double lambda_intercept = 1.0;
  double lambda_diagonal = 1.0;
  double lambda_off_diagonal = 1.0;
  double mcp_gamma = 3.0;  // concavity, only used by MCP

  void validate() const {
    if (lambda_intercept < 0.0 || lambda_diagonal < 0.0 || lambda_off_diagonal < 0.0) {
      throw InvalidInput("PenaltySpec: lambdas must be nonnegative");
    }
    if (!(mcp_gamma > 1.0)) {
      throw InvalidInput("PenaltySpec: mcp_gamma must exceed 1");
    }
  }
};

enum class ParamGroup { kIntercept, kDiagonal, kOffDiagonal };

struct GroupWeight {
  ParamGroup group;
  std::int64_t size;
  double effective_weight;  // lambda * size^rho / n_cal^tau
};

/// Per-group effective weights: lambda_g * size_g^rho / n_cal^tau with group
/// sizes k, k and k(k-1).
inline std::array<GroupWeight, 3> effective_weights(const PenaltySpec& spec, int k,
                                                    std::int64_t n_cal) {
  spec.validate();
  if (k < 2) {
    throw InvalidInput("effective_weights: need k >= 2");
  }
  if (n_cal < 1) {
    throw InvalidInput("effective_weights: need n_cal >= 1");
  }
  const double n_pow = std::pow(static_cast<double>(n_cal), spec.tau);
  const double kd = static_cast<double>(k);
  const double off_size = kd * (kd - 1.0);
  return {GroupWeight{ParamGroup::kIntercept, k,
                      spec.lambda_intercept * std::pow(kd, spec.rho) / n_pow},
          GroupWeight{ParamGroup::kDiagonal, k,
                      spec.lambda_diagonal * std::pow(kd, spec.rho) / n_pow},
          GroupWeight{ParamGroup::kOffDiagonal, static_cast<std::int64_t>(k) * (k - 1),
                      spec.lambda_off_diagonal * std::pow(off_size, spec.rho) / n_pow}};
}

/// Value of `weight * penalty(w)` for one parameter block. Ridge is the
/// squared l2 norm, group lasso the unsquared l2 norm, and MCP the unit-scale
/// minimax concave penalty: |t| - t^2/(2 gamma) for |t| <= gamma, gamma/2 beyond.
inline double penalty_value(PenaltyFamily family, const Eigen::Ref<const Vector>& w,
                            double weight, double mcp_gamma = 3.0) {
  if (weight < 0.0) {
    throw InvalidInput("penalty_value: negative weight");
  }
  if (weight == 0.0 || w.size() == 0) {
    return 0.0;
  }
  switch (family) {
    case PenaltyFamily::kRidge:
      return weight * w.squaredNorm();
    case PenaltyFamily::kLasso:
      return weight * w.lpNorm<1>();
    case PenaltyFamily::kGroupLasso:
      return weight * w.norm();
    case PenaltyFamily::kMcp: {
      double total = 0.0;
      for (Eigen::Index i = 0; i < w.size(); ++i) {
        const double a = std::abs(w[i]);
        total += a <= mcp_gamma ? a - a * a / (2.0 * mcp_gamma) : mcp_gamma / 2.0;
      }
      return weight * total;
    }
  }
  return 0.0;
}

namespace detail {

inline double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

// argmin_w 0.5 (w-z)^2 + s * mcp(w; gamma). For s < gamma the soft-threshold
// region is rescaled by gamma/(gamma-s); for s >= gamma the penalty flattens
// and the prox degenerates to hard thresholding at sqrt(s*gamma).
inline double mcp_prox_scalar(double z, double s, double gamma) {
  const double a = std::abs(z);
  if (s < gamma) {
    if (a > gamma) return z;
    return gamma / (gamma - s) * soft_threshold(z, s);
  }
  return a * a > s * gamma ? z : 0.0;
}

}  // namespace detail

/// Proximal operator of step_weight * penalty(.) applied to one block:
/// w = argmin 0.5 ||w - z||^2 + step_weight * penalty(w).
inline void prox_block(PenaltyFamily family, Eigen::Ref<Vector> z, double step_weight,
                       double mcp_gamma = 3.0) {
  if (step_weight < 0.0) {
    throw InvalidInput("prox_block: negative step weight");
  }
  if (step_weight == 0.0 || z.size() == 0) {
    return;
  }
  switch (family) {
    case PenaltyFamily::kRidge:
      z /= 1.0 + 2.0 * step_weight;
      return;
    case PenaltyFamily::kLasso:
      for (Eigen::Index i = 0; i < z.size(); ++i) {
        z[i] = detail::soft_threshold(z[i], step_weight);
      }
      return;
    case PenaltyFamily::kGroupLasso: {
      const double norm = z.norm();
      if (norm <= step_weight) {
        z.setZero();
      } else {
        z *= 1.0 - step_weight / norm;
      }
      return;
    }
    case PenaltyFamily::kMcp:
      for (Eigen::Index i = 0; i < z.size(); ++i) {
        z[i] = detail::mcp_prox_scalar(z[i], step_weight, mcp_gamma);
      }
      return;
  }
}

inline Vector prox(PenaltyFamily family, Vector z, double step_weight,
                   double mcp_gamma = 3.0) {
  prox_block(family, z, step_weight, mcp_gamma);
  return z;
}

}  // namespace recalib
