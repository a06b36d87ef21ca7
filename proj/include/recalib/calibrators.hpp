#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "recalib/errors.hpp"
#include "recalib/penalties.hpp"
#include "recalib/prob.hpp"
#include "recalib/saga.hpp"

namespace recalib {

enum class Method {
  kTs,
  kBinaryLinear,
  kBinaryAffine,
  kBinaryQuadratic,
  kVs,
  kMs,
  kSvs,
  kSms,
};

inline std::string to_string(Method m) {
  switch (m) {
    case Method::kTs: return "ts";
    case Method::kBinaryLinear: return "binary-linear";
    case Method::kBinaryAffine: return "binary-affine";
    case Method::kBinaryQuadratic: return "binary-quadratic";
    case Method::kVs: return "vs";
    case Method::kMs: return "ms";
    case Method::kSvs: return "svs";
    case Method::kSms: return "sms";
  }
  return "ts";
}

inline Method method_from_string(const std::string& s) {
  if (s == "ts") return Method::kTs;
  if (s == "binary-linear") return Method::kBinaryLinear;
  if (s == "binary-affine") return Method::kBinaryAffine;
  if (s == "binary-quadratic") return Method::kBinaryQuadratic;
  if (s == "vs") return Method::kVs;
  if (s == "ms") return Method::kMs;
  if (s == "svs") return Method::kSvs;
  if (s == "sms") return Method::kSms;
  throw InvalidInput("unknown method: " + s);
}

inline bool is_binary_method(Method m) {
  return m == Method::kBinaryLinear || m == Method::kBinaryAffine ||
         m == Method::kBinaryQuadratic;
}

inline bool is_structured_method(Method m) {
  return m == Method::kVs || m == Method::kMs || m == Method::kSvs || m == Method::kSms;
}

struct FitOptions {
  PenaltySpec penalty;
  saga::SolverConfig solver;
  bool preprocess_ts = true;   // rescale logits with temperature scaling first
  bool center_logits = false;  // uncentered logits match common practice
  bool laplace_smoothing = true;
};

/// Fitted parameters of one calibrator. Empty v/M/b mean structural zeros;
/// binary methods use (quad_gamma, alpha, intercept_beta) on the scalar logit.
struct CalibratorParams {
  Method method = Method::kTs;
  int k = 0;
  double alpha = 1.0;
  Vector v;
  Matrix M;
  Vector b;
  double quad_gamma = 0.0;
  double intercept_beta = 0.0;
  double preprocess_temperature = 1.0;
  bool center_logits = false;
  bool separable_warning = false;
  std::optional<FitOptions> fit_options;

  /// alpha*I + diag(v) + mask.M; the mask keeps M's diagonal inactive except
  /// for plain matrix scaling. Masked diagonal entries of M never enter the
  /// arithmetic at all, so perturbing them cannot change the result.
  Matrix effective_weight_matrix() const {
    Matrix w = Matrix::Zero(k, k);
    if (M.size() > 0) {
      w = M;
      if (method != Method::kMs) w.diagonal().setZero();
    }
    w.diagonal().array() += alpha;
    if (v.size() > 0) w.diagonal() += v;
    return w;
  }
};

/// Row-wise mixture toward the uniform distribution with weight 1/(n+1);
/// keeps every smoothed probability strictly positive.
inline ProbMatrix laplace_smooth(const ProbMatrix& p) {
  const double n = static_cast<double>(p.n());
  const double u = 1.0 / static_cast<double>(p.k());
  Matrix q = (p.values().array() * n + u) / (n + 1.0);
  return ProbMatrix(std::move(q));
}

namespace detail {

inline void check_fit_inputs(const ProbMatrix& p, const LabelVector& y) {
  if (p.n() != y.size() || p.k() != y.k()) {
    throw DimensionMismatch("fit: probabilities and labels disagree");
  }
}

// d/d alpha of the mean log loss of softmax(alpha * z).
inline double temperature_derivative(const Matrix& z, const std::vector<int>& labels,
                                     double alpha) {
  const Eigen::Index n = z.rows();
  Vector w(z.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    w = alpha * z.row(i).transpose();
    const double m = w.maxCoeff();
    w = (w.array() - m).exp();
    w /= w.sum();
    total += w.dot(z.row(i).transpose()) - z(i, labels[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(n);
}

}  // namespace detail

/// One-dimensional convex fit of the global scale alpha by bisection on the
/// derivative, bracketed within [1e-6, 1e4]. With Laplace smoothing an
/// unbounded optimum (e.g. a 100%-accuracy calibration set) lands on the cap
/// and stays finite; without smoothing it is reported as degenerate.
inline CalibratorParams fit_temperature(const ProbMatrix& p, const LabelVector& y,
                                        bool laplace = true) {
  detail::check_fit_inputs(p, y);
  constexpr double kAlphaMin = 1e-6;
  constexpr double kAlphaMax = 1e4;

  const Matrix z = logits_from_probs(laplace ? laplace_smooth(p) : p, false).values();
  const std::vector<int>& labels = y.values();

  double alpha;
  if (detail::temperature_derivative(z, labels, kAlphaMin) >= 0.0) {
    alpha = kAlphaMin;
  } else {
    double lo = kAlphaMin;
    double hi = 1.0;
    while (hi < kAlphaMax && detail::temperature_derivative(z, labels, hi) < 0.0) {
      lo = hi;
      hi *= 2.0;
    }
    hi = std::min(hi, kAlphaMax);
    if (detail::temperature_derivative(z, labels, hi) < 0.0) {
      if (!laplace) {
        throw DegenerateInput("fit_temperature: optimum unbounded (perfectly predicted input)");
      }
      alpha = kAlphaMax;
    } else {
      for (int it = 0; it < 200 && hi - lo > 1e-10; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (detail::temperature_derivative(z, labels, mid) < 0.0) {
          lo = mid;
        } else {
          hi = mid;
        }
      }
      alpha = 0.5 * (lo + hi);
    }
  }

  CalibratorParams out;
  out.method = Method::kTs;
  out.k = p.k();
  out.alpha = alpha;
  FitOptions opts;
  opts.preprocess_ts = false;
  opts.laplace_smoothing = laplace;
  out.fit_options = opts;
  return out;
}

namespace detail {

inline double binary_logloss(const Vector& scores, const std::vector<int>& labels) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    const double u = scores[i];
    // -log sigmoid(u) and -log sigmoid(-u), written without overflow
    const double log_sig = u < 0.0 ? u - std::log1p(std::exp(u)) : -std::log1p(std::exp(-u));
    const double log_one_minus = log_sig - u;
    total -= labels[static_cast<std::size_t>(i)] == 1 ? log_sig : log_one_minus;
  }
  return total / static_cast<double>(scores.size());
}

}  // namespace detail

/// Unregularized logistic regression on (logit^2?, logit, 1?) features, by
/// Newton's method with step halving to a 1e-8 gradient norm. Separable data
/// pushes the optimum to infinity; parameters are then capped at 1e4 in
/// magnitude and flagged instead of failing.
inline CalibratorParams fit_binary(const ProbMatrix& p, const LabelVector& y, Method method) {
  detail::check_fit_inputs(p, y);
  if (!is_binary_method(method)) {
    throw InvalidInput("fit_binary: method must be binary-{linear,affine,quadratic}");
  }
  if (p.k() != 2) {
    throw DimensionMismatch("binary method requires k=2");
  }
  const int n_params = method == Method::kBinaryLinear ? 1
                       : method == Method::kBinaryAffine ? 2
                                                         : 3;
  const Eigen::Index n = p.n();
  if (n < n_params) {
    throw InvalidInput("fit_binary: need at least as many samples as parameters");
  }

  const Vector t = binary_logit(p.values().col(1));
  Matrix x(n, n_params);
  if (method == Method::kBinaryLinear) {
    x.col(0) = t;
  } else if (method == Method::kBinaryAffine) {
    x.col(0) = t;
    x.col(1) = Vector::Ones(n);
  } else {
    x.col(0) = t.cwiseProduct(t);
    x.col(1) = t;
    x.col(2) = Vector::Ones(n);
  }

  constexpr double kNormCap = 1e4;
  const std::vector<int>& labels = y.values();
  Vector theta = Vector::Zero(n_params);
  Vector scores = x * theta;
  double obj = detail::binary_logloss(scores, labels);
  bool separable = false;

  for (int it = 0; it < 200; ++it) {
    Vector mu(n);
    for (Eigen::Index i = 0; i < n; ++i) mu[i] = sigmoid(scores[i]);
    Vector resid = mu;
    for (Eigen::Index i = 0; i < n; ++i) resid[i] -= labels[static_cast<std::size_t>(i)];
    const Vector grad = x.transpose() * resid / static_cast<double>(n);
    if (grad.lpNorm<Eigen::Infinity>() <= 1e-8) break;

    Matrix hess = Matrix::Zero(n_params, n_params);
    for (Eigen::Index i = 0; i < n; ++i) {
      hess.noalias() += mu[i] * (1.0 - mu[i]) * x.row(i).transpose() * x.row(i);
    }
    hess /= static_cast<double>(n);
    hess.diagonal().array() += 1e-12;
    const Vector dir = hess.ldlt().solve(grad);

    double eta = 1.0;
    Vector cand;
    double cand_obj = obj;
    for (int h = 0; h < 60; ++h) {
      cand = theta - eta * dir;
      cand_obj = detail::binary_logloss(x * cand, labels);
      if (cand_obj <= obj) break;
      eta *= 0.5;
    }
    theta = cand;
    scores = x * theta;
    obj = cand_obj;
    if (theta.lpNorm<Eigen::Infinity>() > kNormCap) {
      theta = theta.cwiseMax(-kNormCap).cwiseMin(kNormCap);
      separable = true;
      break;
    }
  }
  // numerically zero training loss means the data are separated and the true
  // optimum sits at infinity; the returned point is just where Newton stopped
  if (obj < 1e-6) {
    separable = true;
  }

  CalibratorParams out;
  out.method = method;
  out.k = 2;
  out.separable_warning = separable;
  if (method == Method::kBinaryLinear) {
    out.alpha = theta[0];
  } else if (method == Method::kBinaryAffine) {
    out.alpha = theta[0];
    out.intercept_beta = theta[1];
  } else {
    out.quad_gamma = theta[0];
    out.alpha = theta[1];
    out.intercept_beta = theta[2];
  }
  return out;
}

struct StructuredFit {
  CalibratorParams params;
  saga::SolveReport report;
};

/// Fits SVS/SMS (and their unregularized VS/MS counterparts, which are the
/// same problems with all lambdas zero) by SAGA. With preprocess_ts the
/// logits are first rescaled by a Laplace-smoothed temperature fit, which
/// makes alpha = 1 the exact optimum of the scale-only subproblem at
/// initialization; the fitted map composes that temperature back in.
inline StructuredFit fit_structured(const ProbMatrix& p, const LabelVector& y, Method method,
                                    const FitOptions& opts = {}) {
  detail::check_fit_inputs(p, y);
  if (!is_structured_method(method)) {
    throw InvalidInput("fit_structured: method must be one of vs/ms/svs/sms");
  }
  const int k = p.k();
  const Eigen::Index n = p.n();

  PenaltySpec pen = opts.penalty;
  if (method == Method::kVs || method == Method::kMs) {
    pen.lambda_intercept = 0.0;
    pen.lambda_diagonal = 0.0;
    pen.lambda_off_diagonal = 0.0;
  }
  pen.validate();

  saga::ModelStructure structure;
  structure.use_v = true;
  structure.use_b = true;
  structure.m_mask = (method == Method::kSvs || method == Method::kVs)
                         ? saga::MatrixMask::kNone
                     : method == Method::kSms ? saga::MatrixMask::kOffDiagonal
                                              : saga::MatrixMask::kFull;

  double t_pre = 1.0;
  Matrix z;
  if (opts.preprocess_ts) {
    const CalibratorParams ts = fit_temperature(p, y, opts.laplace_smoothing);
    t_pre = ts.alpha;
    const ProbMatrix view = opts.laplace_smoothing ? laplace_smooth(p) : p;
    z = logits_from_probs(view, opts.center_logits).values() * t_pre;
  } else {
    z = logits_from_probs(p, opts.center_logits).values();
  }

  const std::array<GroupWeight, 3> w = effective_weights(pen, k, n);
  saga::PenaltyMap penalties;
  penalties.intercept = {pen.family, w[0].effective_weight, pen.mcp_gamma};
  penalties.diagonal = {pen.family, w[1].effective_weight, pen.mcp_gamma};
  penalties.off_diagonal = {pen.family, w[2].effective_weight, pen.mcp_gamma};

  auto [sp, report] =
      saga::solve(z, y.values(), saga::StructuredParams::zeros(k, 1.0), structure, penalties,
                  opts.solver);

  CalibratorParams out;
  out.method = method;
  out.k = k;
  out.alpha = sp.alpha;
  out.v = std::move(sp.v);
  out.b = std::move(sp.b);
  if (structure.m_mask != saga::MatrixMask::kNone) {
    out.M = std::move(sp.M);
  }
  out.preprocess_temperature = t_pre;
  out.center_logits = opts.center_logits;
  out.fit_options = opts;
  return StructuredFit{std::move(out), std::move(report)};
}

/// Applies a fitted calibrator to raw predicted probabilities. Only the
/// probabilities are needed; the preprocessing temperature recorded at fit
/// time is composed in here.
inline ProbMatrix apply(const CalibratorParams& params, const ProbMatrix& p) {
  if (p.k() != params.k) {
    throw DimensionMismatch("apply: calibrator fitted for a different class count");
  }
  if (is_binary_method(params.method)) {
    const Eigen::Index n = p.n();
    Matrix out(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double t = binary_logit(p.values()(i, 1));
      const double s = sigmoid((params.quad_gamma * t + params.alpha) * t + params.intercept_beta);
      out(i, 0) = 1.0 - s;
      out(i, 1) = s;
    }
    return ProbMatrix(std::move(out));
  }

  Matrix z = logits_from_probs(p, params.center_logits).values();
  if (params.method == Method::kTs) {
    z *= params.alpha * params.preprocess_temperature;
    detail::softmax_rows_inplace(z);
    return ProbMatrix(std::move(z));
  }
  z *= params.preprocess_temperature;
  Matrix scores = z * params.effective_weight_matrix().transpose();
  if (params.b.size() > 0) {
    scores.rowwise() += params.b.transpose();
  }
  detail::softmax_rows_inplace(scores);
  return ProbMatrix(std::move(scores));
}

// --- JSON serialization -----------------------------------------------------

namespace saga {

inline void to_json(nlohmann::json& j, const SolverConfig& c) {
  j = nlohmann::json{
      {"max_epochs", c.max_epochs},
      {"tol", c.tol},
      {"seed", c.seed},
      {"shuffle", c.shuffle == SolverConfig::Shuffle::kEveryEpoch ? "every-epoch" : "once"},
  };
  if (c.step_size > 0.0) {
    j["step_size"] = c.step_size;
  } else {
    j["step_size"] = "auto";
  }
}

inline void from_json(const nlohmann::json& j, SolverConfig& c) {
  c = SolverConfig{};
  if (j.contains("max_epochs")) c.max_epochs = j.at("max_epochs").get<int>();
  if (j.contains("tol")) c.tol = j.at("tol").get<double>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("shuffle")) {
    c.shuffle = j.at("shuffle").get<std::string>() == "once" ? SolverConfig::Shuffle::kOnce
                                                             : SolverConfig::Shuffle::kEveryEpoch;
  }
  if (j.contains("step_size") && j.at("step_size").is_number()) {
    c.step_size = j.at("step_size").get<double>();
  }
}

}  // namespace saga

inline void to_json(nlohmann::json& j, const PenaltySpec& s) {
  j = nlohmann::json{
      {"family", to_string(s.family)},
      {"rho", s.rho},
      {"tau", s.tau},
      {"lambda_intercept", s.lambda_intercept},
      {"lambda_diagonal", s.lambda_diagonal},
      {"lambda_off_diagonal", s.lambda_off_diagonal},
      {"mcp_gamma", s.mcp_gamma},
  };
}

inline void from_json(const nlohmann::json& j, PenaltySpec& s) {
  s = PenaltySpec{};
  if (j.contains("family")) s.family = penalty_family_from_string(j.at("family").get<std::string>());
  if (j.contains("rho")) s.rho = j.at("rho").get<double>();
  if (j.contains("tau")) s.tau = j.at("tau").get<double>();
  if (j.contains("lambda_intercept")) s.lambda_intercept = j.at("lambda_intercept").get<double>();
  if (j.contains("lambda_diagonal")) s.lambda_diagonal = j.at("lambda_diagonal").get<double>();
  if (j.contains("lambda_off_diagonal")) {
    s.lambda_off_diagonal = j.at("lambda_off_diagonal").get<double>();
  }
  if (j.contains("mcp_gamma")) s.mcp_gamma = j.at("mcp_gamma").get<double>();
}

inline void to_json(nlohmann::json& j, const FitOptions& o) {
  j = nlohmann::json{
      {"penalty", o.penalty},
      {"solver", o.solver},
      {"preprocess_ts", o.preprocess_ts},
      {"center_logits", o.center_logits},
      {"laplace_smoothing", o.laplace_smoothing},
  };
}

inline void from_json(const nlohmann::json& j, FitOptions& o) {
  o = FitOptions{};
  if (j.contains("penalty")) o.penalty = j.at("penalty").get<PenaltySpec>();
  if (j.contains("solver")) o.solver = j.at("solver").get<saga::SolverConfig>();
  if (j.contains("preprocess_ts")) o.preprocess_ts = j.at("preprocess_ts").get<bool>();
  if (j.contains("center_logits")) o.center_logits = j.at("center_logits").get<bool>();
  if (j.contains("laplace_smoothing")) o.laplace_smoothing = j.at("laplace_smoothing").get<bool>();
}

inline void to_json(nlohmann::json& j, const CalibratorParams& p) {
  j = nlohmann::json{
      {"method", to_string(p.method)},
      {"k", p.k},
      {"alpha", p.alpha},
      {"preprocess_temperature", p.preprocess_temperature},
  };
  if (p.v.size() > 0) {
    j["v"] = std::vector<double>(p.v.data(), p.v.data() + p.v.size());
  }
  if (p.M.size() > 0) {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(p.M.size()));
    for (Eigen::Index r = 0; r < p.M.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.M.cols(); ++c) flat.push_back(p.M(r, c));
    }
    j["M"] = flat;
  }
  if (p.b.size() > 0) {
    j["b"] = std::vector<double>(p.b.data(), p.b.data() + p.b.size());
  }
  if (is_binary_method(p.method)) {
    j["gamma_beta"] = std::vector<double>{p.quad_gamma, p.alpha, p.intercept_beta};
  }
  if (p.center_logits) j["center_logits"] = true;
  if (p.separable_warning) j["separable_warning"] = true;
  if (p.fit_options) j["fit_options"] = *p.fit_options;
}

inline void from_json(const nlohmann::json& j, CalibratorParams& p) {
  p = CalibratorParams{};
  p.method = method_from_string(j.at("method").get<std::string>());
  p.k = j.at("k").get<int>();
  p.alpha = j.at("alpha").get<double>();
  p.preprocess_temperature = j.value("preprocess_temperature", 1.0);
  if (j.contains("v")) {
    const auto v = j.at("v").get<std::vector<double>>();
    p.v = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  if (j.contains("M")) {
    const auto flat = j.at("M").get<std::vector<double>>();
    if (static_cast<int>(flat.size()) != p.k * p.k) {
      throw ParseError("CalibratorParams: M must hold k*k entries");
    }
    p.M.resize(p.k, p.k);
    for (int r = 0; r < p.k; ++r) {
      for (int c = 0; c < p.k; ++c) p.M(r, c) = flat[static_cast<std::size_t>(r) * p.k + c];
    }
  }
  if (j.contains("b")) {
    const auto b = j.at("b").get<std::vector<double>>();
    p.b = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
  }
  if (j.contains("gamma_beta")) {
    const auto gb = j.at("gamma_beta").get<std::vector<double>>();
    if (gb.size() != 3) throw ParseError("CalibratorParams: gamma_beta must hold 3 entries");
    p.quad_gamma = gb[0];
    p.alpha = gb[1];
    p.intercept_beta = gb[2];
  }
  p.center_logits = j.value("center_logits", false);
  p.separable_warning = j.value("separable_warning", false);
  if (j.contains("fit_options")) p.fit_options = j.at("fit_options").get<FitOptions>();
}

}  // namespace recalib
