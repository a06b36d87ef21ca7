#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "recalib/calibrators.hpp"
#include "recalib/gaussian.hpp"
#include "recalib/metrics.hpp"
#include "recalib/presets.hpp"
#include "support.hpp"

using namespace recalib;

namespace {

// Bayes-calibrated predictions: push sampled classifier logits through the
// exact posterior map, so the resulting ProbMatrix needs no recalibration.
struct CalibratedData {
  ProbMatrix probs;
  LabelVector labels;
};

CalibratedData calibrated_from_oracle(const GaussianMixtureSpec& spec, Eigen::Index n,
                                      std::uint64_t seed) {
  const SampleSet raw = sample(spec, n, seed);
  const MulticlassOracle oracle = multiclass_oracle(spec);
  return CalibratedData{ProbMatrix(oracle.posterior_rows(raw.raw_logits)), raw.labels};
}

double mean_logloss_alpha(const Matrix& z, const std::vector<int>& y, double alpha) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Vector w = alpha * z.row(i).transpose();
    const double m = w.maxCoeff();
    total += m + std::log((w.array() - m).exp().sum()) - w[y[static_cast<std::size_t>(i)]];
  }
  return total / static_cast<double>(z.rows());
}

}  // namespace

TEST_CASE("laplace smoothing formula") {
  Matrix p(1, 2);
  p << 1.0, 0.0;
  const ProbMatrix sm = laplace_smooth(ProbMatrix(p));
  REQUIRE(sm.values()(0, 0) == Catch::Approx(0.75).margin(1e-15));  // (1*1 + 1/2) / 2
  REQUIRE(sm.values()(0, 1) == Catch::Approx(0.25).margin(1e-15));
}

TEST_CASE("temperature fit on matched constant predictions") {
  // all rows predict 0.75 and the empirical class-0 frequency is 0.75
  const int n = 1000;
  Matrix p(n, 2);
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) {
    p(i, 0) = 0.75;
    p(i, 1) = 0.25;
    y[static_cast<std::size_t>(i)] = i % 4 == 3 ? 1 : 0;
  }
  const ProbMatrix pm(p);
  const LabelVector labels(y, 2);
  const CalibratorParams fit = fit_temperature(pm, labels, /*laplace=*/false);
  REQUIRE(fit.alpha == Catch::Approx(1.0).margin(1e-3));

  // 1-D brute force over the same objective
  const Matrix z = logits_from_probs(pm, false).values();
  const double oracle = testsupport::golden_section_min(
      [&](double a) { return mean_logloss_alpha(z, y, a); }, 0.01, 100.0, 1e-12);
  REQUIRE(fit.alpha == Catch::Approx(oracle).margin(1e-6));
}

TEST_CASE("temperature fit is near one on Bayes-calibrated data") {
  const CalibratedData data =
      calibrated_from_oracle(make_preset("multiclass-equal-cov"), 100000, 5);
  const CalibratorParams fit = fit_temperature(data.probs, data.labels, true);
  REQUIRE(fit.alpha == Catch::Approx(1.0).margin(0.02));
}

TEST_CASE("temperature fit on perfectly predicted one-hot input") {
  Matrix p(6, 3);
  std::vector<int> y(6);
  p.setZero();
  for (int i = 0; i < 6; ++i) {
    p(i, i % 3) = 1.0;
    y[static_cast<std::size_t>(i)] = i % 3;
  }
  const ProbMatrix pm(p);
  const LabelVector labels(y, 3);
  SECTION("laplace smoothing keeps the fit finite") {
    const CalibratorParams fit = fit_temperature(pm, labels, true);
    REQUIRE(std::isfinite(fit.alpha));
    const ProbMatrix out = apply(fit, pm);
    REQUIRE(out.values().allFinite());
  }
  SECTION("without smoothing the problem is degenerate") {
    REQUIRE_THROWS_AS(fit_temperature(pm, labels, false), DegenerateInput);
  }
}

TEST_CASE("binary fit: equal variances give a vanishing quadratic term") {
  GaussianMixtureSpec spec = make_preset("binary-unequal-variance");
  spec.covariances[0] = Matrix::Constant(1, 1, 1.0);  // now equal
  const SampleSet data = sample(spec, 500000, 11);
  const CalibratorParams fit = fit_binary(data.probs, data.labels, Method::kBinaryQuadratic);
  REQUIRE(std::abs(fit.quad_gamma) < 0.02);
}

TEST_CASE("binary fit on calibrated input is the identity map") {
  const GaussianMixtureSpec spec = make_preset("binary-unequal-variance");
  const BinaryOracle oracle = binary_oracle(spec);
  const SampleSet raw = sample(spec, 500000, 13);
  Matrix p(raw.probs.n(), 2);
  for (Eigen::Index i = 0; i < raw.probs.n(); ++i) {
    const double s = oracle.posterior_positive(raw.raw_logits(i, 1));
    p(i, 0) = 1.0 - s;
    p(i, 1) = s;
  }
  const CalibratorParams fit =
      fit_binary(ProbMatrix(p), raw.labels, Method::kBinaryQuadratic);
  REQUIRE(fit.quad_gamma == Catch::Approx(0.0).margin(0.05));
  REQUIRE(fit.alpha == Catch::Approx(1.0).margin(0.05));
  REQUIRE(fit.intercept_beta == Catch::Approx(0.0).margin(0.05));
}

TEST_CASE("binary fit input validation") {
  const ProbMatrix p3(Matrix::Constant(4, 3, 1.0 / 3.0));
  REQUIRE_THROWS_AS(fit_binary(p3, LabelVector({0, 1, 2, 0}, 3), Method::kBinaryQuadratic),
                    DimensionMismatch);
  Matrix p(2, 2);
  p << 0.6, 0.4, 0.3, 0.7;
  REQUIRE_THROWS_AS(fit_binary(ProbMatrix(p), LabelVector({0, 1}, 2), Method::kBinaryQuadratic),
                    InvalidInput);  // n < number of parameters
  REQUIRE_THROWS_AS(fit_binary(ProbMatrix(p), LabelVector({0, 1}, 2), Method::kTs), InvalidInput);
}

TEST_CASE("separable binary data is capped and flagged") {
  Matrix p(4, 2);
  p << 0.2, 0.8, 0.3, 0.7, 0.7, 0.3, 0.8, 0.2;
  const LabelVector y({1, 1, 0, 0}, 2);
  const CalibratorParams fit = fit_binary(ProbMatrix(p), y, Method::kBinaryAffine);
  REQUIRE(fit.separable_warning);
  REQUIRE(std::abs(fit.alpha) <= 1e4);
  // still applies cleanly
  const ProbMatrix out = apply(fit, ProbMatrix(p));
  REQUIRE(out.values().allFinite());
}

TEST_CASE("structured fit composes the preprocessing temperature") {
  const SampleSet data = sample(make_preset("multiclass-equal-cov"), 800, 17);
  FitOptions opts;
  opts.solver.max_epochs = 150;
  opts.solver.seed = 3;
  const StructuredFit fit = fit_structured(data.probs, data.labels, Method::kSms, opts);
  REQUIRE(fit.params.preprocess_temperature > 0.0);
  REQUIRE(fit.params.method == Method::kSms);
  REQUIRE(fit.params.k == 3);
  REQUIRE(fit.params.v.size() == 3);
  REQUIRE(fit.params.M.rows() == 3);

  // objective at the returned point never exceeds the alpha=1 start
  const ProbMatrix view = laplace_smooth(data.probs);
  const Matrix z = logits_from_probs(view, false).values() * fit.params.preprocess_temperature;
  saga::ModelStructure st;
  st.m_mask = saga::MatrixMask::kOffDiagonal;
  const auto w = effective_weights(opts.penalty, 3, data.probs.n());
  saga::PenaltyMap pm;
  pm.intercept = {opts.penalty.family, w[0].effective_weight, opts.penalty.mcp_gamma};
  pm.diagonal = {opts.penalty.family, w[1].effective_weight, opts.penalty.mcp_gamma};
  pm.off_diagonal = {opts.penalty.family, w[2].effective_weight, opts.penalty.mcp_gamma};
  saga::StructuredParams returned;
  returned.alpha = fit.params.alpha;
  returned.v = fit.params.v;
  returned.M = fit.params.M;
  returned.b = fit.params.b;
  const double at_init = saga::composite_objective(
      z, data.labels.values(), saga::StructuredParams::zeros(3, 1.0), st, pm);
  const double at_fit = saga::composite_objective(z, data.labels.values(), returned, st, pm);
  REQUIRE(at_fit <= at_init + 1e-12);
  REQUIRE(at_fit == Catch::Approx(fit.report.final_objective).margin(1e-10));
}

TEST_CASE("huge penalties collapse the structured fit onto temperature scaling") {
  const SampleSet cal = sample(make_preset("multiclass-unequal-cov"), 2000, 19);
  const SampleSet test = sample(make_preset("multiclass-unequal-cov"), 4000, 23);

  const CalibratorParams ts = fit_temperature(cal.probs, cal.labels, true);
  FitOptions opts;
  opts.penalty.lambda_intercept = 1e8;
  opts.penalty.lambda_diagonal = 1e8;
  opts.penalty.lambda_off_diagonal = 1e8;
  opts.solver.max_epochs = 400;
  opts.solver.seed = 5;

  const double ts_loss = logloss(apply(ts, test.probs), test.labels);
  for (Method m : {Method::kSvs, Method::kSms}) {
    const StructuredFit fit = fit_structured(cal.probs, cal.labels, m, opts);
    const double loss = logloss(apply(fit.params, test.probs), test.labels);
    REQUIRE(std::abs(loss - ts_loss) < 1e-3);  // nesting collapses to TS
  }
  const StructuredFit sms = fit_structured(cal.probs, cal.labels, Method::kSms, opts);
  const double cal_ts = logloss(apply(ts, cal.probs), cal.labels);
  const double cal_sms = logloss(apply(sms.params, cal.probs), cal.labels);
  REQUIRE(std::abs(cal_sms - cal_ts) < 1e-4);
}

TEST_CASE("SMS diagonal of M is structurally inactive") {
  const SampleSet data = sample(make_preset("multiclass-equal-cov"), 500, 29);
  FitOptions opts;
  opts.solver.max_epochs = 100;
  const StructuredFit fit = fit_structured(data.probs, data.labels, Method::kSms, opts);

  CalibratorParams perturbed = fit.params;
  perturbed.M.diagonal().array() += 123.456;
  const ProbMatrix a = apply(fit.params, data.probs);
  const ProbMatrix b = apply(perturbed, data.probs);
  REQUIRE((a.values() - b.values()).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("SVS parameters embed into SMS with zero M") {
  const SampleSet data = sample(make_preset("multiclass-unequal-cov"), 400, 31);
  FitOptions opts;
  opts.solver.max_epochs = 120;
  const StructuredFit svs = fit_structured(data.probs, data.labels, Method::kSvs, opts);

  CalibratorParams as_sms = svs.params;
  as_sms.method = Method::kSms;
  as_sms.M = Matrix::Zero(3, 3);
  const ProbMatrix a = apply(svs.params, data.probs);
  const ProbMatrix b = apply(as_sms, data.probs);
  REQUIRE((a.values() - b.values()).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("apply identity cases") {
  Matrix p(3, 2);
  p << 0.9, 0.1, 0.5, 0.5, 0.25, 0.75;
  const ProbMatrix pm(p);

  SECTION("unit temperature is the identity") {
    CalibratorParams ts;
    ts.method = Method::kTs;
    ts.k = 2;
    ts.alpha = 1.0;
    const ProbMatrix out = apply(ts, pm);
    REQUIRE((out.values() - pm.values()).lpNorm<Eigen::Infinity>() < 1e-9);
  }
  SECTION("zeroed SMS equals the temperature-preprocessed input") {
    CalibratorParams sms;
    sms.method = Method::kSms;
    sms.k = 2;
    sms.alpha = 1.0;
    sms.v = Vector::Zero(2);
    sms.M = Matrix::Zero(2, 2);
    sms.b = Vector::Zero(2);
    sms.preprocess_temperature = 0.7;
    const ProbMatrix out = apply(sms, pm);
    const Matrix expect =
        detail::softmax_rows(Matrix(0.7 * logits_from_probs(pm, false).values()));
    REQUIRE((out.values() - expect).lpNorm<Eigen::Infinity>() < 1e-12);
  }
  SECTION("identity binary quadratic") {
    CalibratorParams bq;
    bq.method = Method::kBinaryQuadratic;
    bq.k = 2;
    bq.quad_gamma = 0.0;
    bq.alpha = 1.0;
    bq.intercept_beta = 0.0;
    const ProbMatrix out = apply(bq, pm);
    REQUIRE((out.values() - pm.values()).lpNorm<Eigen::Infinity>() < 1e-9);
  }
  SECTION("k mismatch is rejected") {
    CalibratorParams ts;
    ts.method = Method::kTs;
    ts.k = 5;
    REQUIRE_THROWS_AS(apply(ts, pm), DimensionMismatch);
  }
}

TEST_CASE("apply preserves row-stochasticity") {
  std::mt19937_64 gen(37);
  const SampleSet data = sample(make_preset("multiclass-unequal-cov"), 200, 41);
  CalibratorParams params;
  params.method = Method::kSms;
  params.k = 3;
  params.alpha = 1.4;
  params.v = Vector::Zero(3);
  params.M = Matrix::Zero(3, 3);
  params.b = Vector::Zero(3);
  for (int i = 0; i < 3; ++i) {
    params.v[i] = rng::standard_normal(gen) * 0.3;
    params.b[i] = rng::standard_normal(gen) * 0.5;
    for (int j = 0; j < 3; ++j) params.M(i, j) = rng::standard_normal(gen) * 0.4;
  }
  const ProbMatrix out = apply(params, data.probs);
  for (Eigen::Index i = 0; i < out.n(); ++i) {
    REQUIRE(std::abs(out.values().row(i).sum() - 1.0) < 1e-6);
  }
}

TEST_CASE("structured fits are deterministic") {
  const SampleSet data = sample(make_preset("many-class-small-n"), 200, 43);
  FitOptions opts;
  opts.solver.max_epochs = 60;
  opts.solver.seed = 11;
  const StructuredFit a = fit_structured(data.probs, data.labels, Method::kSms, opts);
  const StructuredFit b = fit_structured(data.probs, data.labels, Method::kSms, opts);
  REQUIRE(a.params.alpha == b.params.alpha);
  REQUIRE((a.params.M - b.params.M).lpNorm<Eigen::Infinity>() == 0.0);
  REQUIRE((a.params.b - b.params.b).lpNorm<Eigen::Infinity>() == 0.0);
  REQUIRE(a.report.objective_trace == b.report.objective_trace);
}

TEST_CASE("SMS reaches the Bayes loss on equal covariances (reduced size)") {
  const GaussianMixtureSpec spec = make_preset("multiclass-equal-cov");
  const SampleSet cal = sample(spec, 4000, 47);
  const SampleSet test = sample(spec, 40000, 53);
  FitOptions opts;
  opts.solver.max_epochs = 400;
  opts.solver.seed = 7;
  const StructuredFit sms = fit_structured(cal.probs, cal.labels, Method::kSms, opts);
  const double loss = logloss(apply(sms.params, test.probs), test.labels);
  const MonteCarloEstimate bayes = bayes_logloss(spec, 200000, 59);
  REQUIRE(loss <= bayes.value + 0.02);
  REQUIRE(loss >= bayes.value - 2.0 * bayes.std_error - 0.02);
}

TEST_CASE("params JSON round trip") {
  const SampleSet data = sample(make_preset("multiclass-unequal-cov"), 300, 61);
  FitOptions opts;
  opts.solver.max_epochs = 50;
  opts.penalty.family = PenaltyFamily::kGroupLasso;
  opts.penalty.rho = 0.5;
  const StructuredFit fit = fit_structured(data.probs, data.labels, Method::kSms, opts);

  nlohmann::json j = fit.params;
  const CalibratorParams back = j.get<CalibratorParams>();
  REQUIRE(back.method == Method::kSms);
  REQUIRE(back.k == fit.params.k);
  REQUIRE(back.alpha == fit.params.alpha);
  REQUIRE(back.preprocess_temperature == fit.params.preprocess_temperature);
  REQUIRE((back.v - fit.params.v).lpNorm<Eigen::Infinity>() == 0.0);
  REQUIRE((back.M - fit.params.M).lpNorm<Eigen::Infinity>() == 0.0);
  REQUIRE((back.b - fit.params.b).lpNorm<Eigen::Infinity>() == 0.0);
  REQUIRE(back.fit_options.has_value());
  REQUIRE(back.fit_options->penalty.family == PenaltyFamily::kGroupLasso);
  REQUIRE(back.fit_options->penalty.rho == 0.5);

  const ProbMatrix a = apply(fit.params, data.probs);
  const ProbMatrix b = apply(back, data.probs);
  REQUIRE((a.values() - b.values()).lpNorm<Eigen::Infinity>() == 0.0);

  // binary params round trip through the gamma_beta triple
  CalibratorParams bin;
  bin.method = Method::kBinaryQuadratic;
  bin.k = 2;
  bin.quad_gamma = -0.375;
  bin.alpha = 1.25;
  bin.intercept_beta = 0.3181;
  nlohmann::json bj = bin;
  const CalibratorParams bback = bj.get<CalibratorParams>();
  REQUIRE(bback.quad_gamma == bin.quad_gamma);
  REQUIRE(bback.alpha == bin.alpha);
  REQUIRE(bback.intercept_beta == bin.intercept_beta);
}

TEST_CASE("fit_structured rejects non-structured methods") {
  const SampleSet data = sample(make_preset("multiclass-equal-cov"), 50, 67);
  REQUIRE_THROWS_AS(fit_structured(data.probs, data.labels, Method::kTs, {}), InvalidInput);
}

TEST_CASE("centered-logit mode fits and applies") {
  const SampleSet cal = sample(make_preset("multiclass-equal-cov"), 600, 71);
  const SampleSet test = sample(make_preset("multiclass-equal-cov"), 600, 73);
  FitOptions opts;
  opts.center_logits = true;
  opts.solver.max_epochs = 150;
  const StructuredFit fit = fit_structured(cal.probs, cal.labels, Method::kSvs, opts);
  REQUIRE(fit.params.center_logits);
  const ProbMatrix out = apply(fit.params, test.probs);
  REQUIRE(out.values().allFinite());
  // centering must survive serialization, or apply would use the wrong logits
  nlohmann::json j = fit.params;
  const CalibratorParams back = j.get<CalibratorParams>();
  REQUIRE(back.center_logits);
  REQUIRE((apply(back, test.probs).values() - out.values()).lpNorm<Eigen::Infinity>() == 0.0);
}
