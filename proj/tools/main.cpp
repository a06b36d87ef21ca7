// recalib: fit/apply/evaluate post-hoc probability calibrators on prediction
// files, generate synthetic Gaussian problems with known recalibration maps,
// run hyperparameter sweeps, and emit plot-ready benchmark summaries.

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "recalib/calibrators.hpp"
#include "recalib/gaussian.hpp"
#include "recalib/io.hpp"
#include "recalib/metrics.hpp"
#include "recalib/presets.hpp"
#include "recalib/random.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

using nlohmann::json;
using namespace recalib;

int thread_budget() {
  if (const char* env = std::getenv("CALIB_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn over 0..n_items on a bounded pool; every call writes into its own
// preallocated slot, so completion order never matters.
void parallel_for(int n_items, const std::function<void(int)>& fn) {
  const int workers = std::min(thread_budget(), std::max(n_items, 1));
  if (workers <= 1) {
    for (int i = 0; i < n_items; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < n_items; i = next.fetch_add(1)) fn(i);
    });
  }
  for (std::thread& t : pool) t.join();
}

struct FitFlags {
  std::string method = "sms";
  std::string penalty = "ridge";
  double rho = 1.0;
  double tau = 1.0;
  double lambda_intercept = 1.0;
  double lambda_diagonal = 1.0;
  double lambda_off_diagonal = 1.0;
  double mcp_gamma = 3.0;
  bool no_preprocess_ts = false;
  bool center_logits = false;
  bool no_laplace = false;
  std::uint64_t seed = 0;
  int max_epochs = 500;
  double tol = 1e-7;
  double step_size = 0.0;

  FitOptions options() const {
    FitOptions o;
    o.penalty.family = penalty_family_from_string(penalty);
    o.penalty.rho = rho;
    o.penalty.tau = tau;
    o.penalty.lambda_intercept = lambda_intercept;
    o.penalty.lambda_diagonal = lambda_diagonal;
    o.penalty.lambda_off_diagonal = lambda_off_diagonal;
    o.penalty.mcp_gamma = mcp_gamma;
    o.solver.seed = seed;
    o.solver.max_epochs = max_epochs;
    o.solver.tol = tol;
    o.solver.step_size = step_size;
    o.preprocess_ts = !no_preprocess_ts;
    o.center_logits = center_logits;
    o.laplace_smoothing = !no_laplace;
    return o;
  }
};

void add_fit_flags(CLI::App* cmd, FitFlags& f) {
  cmd->add_option("--method", f.method,
                  "ts|binary-linear|binary-affine|binary-quadratic|vs|ms|svs|sms");
  cmd->add_option("--penalty", f.penalty, "ridge|lasso|group-lasso|mcp");
  cmd->add_option("--rho", f.rho, "group-size exponent");
  cmd->add_option("--tau", f.tau, "sample-count exponent");
  cmd->add_option("--lambda-intercept", f.lambda_intercept, "intercept group weight");
  cmd->add_option("--lambda-diagonal", f.lambda_diagonal, "diagonal group weight");
  cmd->add_option("--lambda-off-diagonal", f.lambda_off_diagonal, "off-diagonal group weight");
  cmd->add_option("--mcp-gamma", f.mcp_gamma, "MCP concavity (> 1)");
  cmd->add_flag("--no-preprocess-ts", f.no_preprocess_ts,
                "skip the temperature-scaling preprocessing");
  cmd->add_flag("--center-logits", f.center_logits, "center logit rows before fitting");
  cmd->add_flag("--no-laplace", f.no_laplace, "disable Laplace smoothing");
  cmd->add_option("--seed", f.seed, "solver sampling seed");
  cmd->add_option("--max-epochs", f.max_epochs, "solver epoch budget");
  cmd->add_option("--tol", f.tol, "solver convergence tolerance");
  cmd->add_option("--step-size", f.step_size, "solver step size (0 = auto)");
}

CalibratorParams fit_dispatch(Method method, const PredictionData& data, const FitFlags& flags) {
  if (!data.labels) {
    throw InvalidInput("fit requires a label column y");
  }
  if (data.probs.renormalized_rows() > 0) {
    std::cerr << "warning: renormalized " << data.probs.renormalized_rows()
              << " probability rows\n";
  }
  if (method == Method::kTs) {
    CalibratorParams p = fit_temperature(data.probs, *data.labels, !flags.no_laplace);
    p.fit_options = flags.options();
    p.fit_options->preprocess_ts = false;
    return p;
  }
  if (is_binary_method(method)) {
    CalibratorParams p = fit_binary(data.probs, *data.labels, method);
    if (p.separable_warning) {
      std::cerr << "warning: separable calibration data, parameters capped\n";
    }
    p.fit_options = flags.options();
    p.fit_options->preprocess_ts = false;
    return p;
  }
  StructuredFit fit = fit_structured(data.probs, *data.labels, method, flags.options());
  if (!fit.report.converged) {
    std::cerr << "note: solver stopped at the epoch budget (" << fit.report.epochs_run
              << " epochs)\n";
  }
  return std::move(fit.params);
}

int cmd_fit(const std::string& input, const std::string& out, const FitFlags& flags) {
  const Method method = method_from_string(flags.method);
  const PredictionData data = read_prediction_csv(input);
  const CalibratorParams params = fit_dispatch(method, data, flags);
  write_json_file(out, json(params));
  return kExitOk;
}

int cmd_apply(const std::string& params_path, const std::string& input, const std::string& out) {
  const json j = read_json_file(params_path);
  const CalibratorParams params = j.get<CalibratorParams>();
  const PredictionData data = read_prediction_csv(input);
  const ProbMatrix calibrated = apply(params, data.probs);
  write_prediction_csv(out, calibrated.values(), data.labels ? &data.labels->values() : nullptr);
  return kExitOk;
}

json eval_report_json(const EvalReport& r, const std::string& metric) {
  json j;
  if (metric != "brier") j["logloss"] = r.logloss;
  if (metric != "logloss") j["brier"] = r.brier;
  j["n"] = r.n;
  j["per_sample_logloss_clip"] = r.per_sample_logloss_clip;
  return j;
}

int cmd_eval(const std::string& input, const std::string& before, const std::string& after,
             const std::string& metric) {
  if (!input.empty()) {
    const PredictionData data = read_prediction_csv(input);
    if (!data.labels) throw InvalidInput("eval requires a label column y");
    std::cout << eval_report_json(evaluate(data.probs, *data.labels), metric).dump(2) << "\n";
    return kExitOk;
  }
  const PredictionData b = read_prediction_csv(before);
  const PredictionData a = read_prediction_csv(after);
  if (!b.labels || !a.labels) throw InvalidInput("eval requires a label column y");
  const EvalReport rb = evaluate(b.probs, *b.labels);
  const EvalReport ra = evaluate(a.probs, *a.labels);
  json out;
  out["before"] = eval_report_json(rb, metric);
  out["after"] = eval_report_json(ra, metric);
  json rel;
  if (metric != "brier") rel["logloss"] = relative_improvement(rb.logloss, ra.logloss);
  if (metric != "logloss") rel["brier"] = relative_improvement(rb.brier, ra.brier);
  out["relative_improvement"] = rel;
  std::cout << out.dump(2) << "\n";
  return kExitOk;
}

int cmd_synth(const std::string& preset, const std::string& spec_path, const std::string& out_dir,
              Eigen::Index n_train, Eigen::Index n_cal, Eigen::Index n_test, std::uint64_t seed,
              std::int64_t n_mc) {
  if (preset.empty() == spec_path.empty()) {
    throw InvalidInput("synth needs exactly one of --preset or --spec");
  }
  const GaussianMixtureSpec spec =
      preset.empty() ? read_json_file(spec_path).get<GaussianMixtureSpec>() : make_preset(preset);

  std::filesystem::create_directories(out_dir);
  const auto emit = [&](const std::string& name, Eigen::Index n, std::uint64_t stream) {
    const SampleSet s = sample(spec, n, rng::derive_seed(seed, stream));
    write_prediction_csv(out_dir + "/" + name, s.probs.values(), &s.labels.values());
  };
  emit("train.csv", n_train, 1);
  emit("cal.csv", n_cal, 2);
  emit("test.csv", n_test, 3);

  json oracle;
  if (spec.binary()) {
    const BinaryOracle o = binary_oracle(spec);
    oracle["type"] = "binary";
    oracle["a"] = o.a;
    oracle["b"] = o.b;
    oracle["c"] = o.c;
    oracle["m_plus"] = o.m_plus;
    oracle["m_minus"] = o.m_minus;
    oracle["var_plus"] = o.var_plus;
    oracle["var_minus"] = o.var_minus;
    oracle["pi_plus"] = o.pi_plus;
    oracle["pi_minus"] = o.pi_minus;
  } else {
    const MulticlassOracle o = multiclass_oracle(spec);
    oracle["type"] = "multiclass";
    json b_rows = json::array();
    json means = json::array();
    json pinvs = json::array();
    for (int i = 0; i < o.k; ++i) {
      b_rows.push_back(std::vector<double>(o.B.row(i).begin(), o.B.row(i).end()));
      means.push_back(std::vector<double>(o.means.row(i).begin(), o.means.row(i).end()));
      std::vector<double> flat;
      for (int r = 0; r < o.k; ++r) {
        for (int c = 0; c < o.k; ++c) {
          flat.push_back(o.sigma_pinv[static_cast<std::size_t>(i)](r, c));
        }
      }
      pinvs.push_back(flat);
    }
    oracle["B"] = b_rows;
    oracle["C"] = std::vector<double>(o.C.data(), o.C.data() + o.C.size());
    oracle["means_centered"] = means;
    oracle["sigma_pinv"] = pinvs;
    oracle["log_pdet"] = o.log_pdet;
    oracle["quad_constant"] = o.quad_constant;
  }
  const MonteCarloEstimate bayes = bayes_logloss(spec, n_mc, rng::derive_seed(seed, 4));
  oracle["bayes_logloss"] =
      json{{"value", bayes.value}, {"std_error", bayes.std_error}, {"n_mc", bayes.n}};
  oracle["seed"] = seed;
  write_json_file(out_dir + "/oracle.json", oracle);
  write_json_file(out_dir + "/spec.json", json(spec));
  return kExitOk;
}

std::vector<double> axis_values(const json& grid, const std::string& key, double fallback) {
  if (!grid.contains(key)) return {fallback};
  return grid.at(key).get<std::vector<double>>();
}

int cmd_sweep(const std::string& input, const std::string& grid_path, const std::string& objective,
              double cal_frac, std::uint64_t seed, int max_epochs, const std::string& out_path) {
  const PredictionData data = read_prediction_csv(input);
  if (!data.labels) throw InvalidInput("sweep requires a label column y");
  const json grid = read_json_file(grid_path);

  const std::string method_name = grid.value("method", std::string("sms"));
  const Method method = method_from_string(method_name);
  if (!is_structured_method(method)) {
    throw InvalidInput("sweep supports the structured methods vs/ms/svs/sms");
  }
  std::vector<std::string> penalties{"ridge"};
  if (grid.contains("penalty")) penalties = grid.at("penalty").get<std::vector<std::string>>();
  const std::vector<double> rhos = axis_values(grid, "rho", 1.0);
  const std::vector<double> taus = axis_values(grid, "tau", 1.0);
  const std::vector<double> l_b = axis_values(grid, "lambda_intercept", 1.0);
  const std::vector<double> l_v = axis_values(grid, "lambda_diagonal", 1.0);
  const std::vector<double> l_m = axis_values(grid, "lambda_off_diagonal", 1.0);
  const std::vector<double> gammas = axis_values(grid, "mcp_gamma", 3.0);

  std::vector<FitOptions> configs;
  for (const std::string& pen : penalties) {
    for (double rho : rhos) {
      for (double tau : taus) {
        for (double lb : l_b) {
          for (double lv : l_v) {
            for (double lm : l_m) {
              for (double g : gammas) {
                FitOptions o;
                o.penalty.family = penalty_family_from_string(pen);
                o.penalty.rho = rho;
                o.penalty.tau = tau;
                o.penalty.lambda_intercept = lb;
                o.penalty.lambda_diagonal = lv;
                o.penalty.lambda_off_diagonal = lm;
                o.penalty.mcp_gamma = g;
                o.solver.seed = seed;
                o.solver.max_epochs = max_epochs;
                configs.push_back(o);
              }
            }
          }
        }
      }
    }
  }
  if (configs.empty()) {
    throw InvalidInput("sweep grid is empty");
  }

  // holdout split: an explicit split column wins, otherwise a seeded shuffle
  const Eigen::Index n = data.probs.n();
  std::vector<int> fit_rows, holdout_rows;
  if (data.split) {
    for (Eigen::Index i = 0; i < n; ++i) {
      ((*data.split)[static_cast<std::size_t>(i)] == 0 ? fit_rows : holdout_rows)
          .push_back(static_cast<int>(i));
    }
  } else {
    std::mt19937_64 gen(rng::derive_seed(seed, 17));
    std::vector<int> perm = rng::permutation(static_cast<int>(n), gen);
    const Eigen::Index n_fit =
        std::max<Eigen::Index>(1, static_cast<Eigen::Index>(cal_frac * static_cast<double>(n)));
    for (Eigen::Index i = 0; i < n; ++i) {
      (i < n_fit ? fit_rows : holdout_rows).push_back(perm[static_cast<std::size_t>(i)]);
    }
  }
  if (fit_rows.empty() || holdout_rows.empty()) {
    throw InvalidInput("sweep needs both a fit part and a holdout part");
  }

  const auto subset = [&](const std::vector<int>& rows) {
    Matrix p(static_cast<Eigen::Index>(rows.size()), data.probs.k());
    std::vector<int> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      p.row(static_cast<Eigen::Index>(i)) = data.probs.values().row(rows[i]);
      y[i] = (*data.labels)[rows[i]];
    }
    return std::make_pair(ProbMatrix(std::move(p)), LabelVector(std::move(y), data.probs.k()));
  };
  const auto [fit_probs, fit_labels] = subset(fit_rows);
  const auto [hold_probs, hold_labels] = subset(holdout_rows);

  std::vector<json> results(configs.size());
  parallel_for(static_cast<int>(configs.size()), [&](int i) {
    const FitOptions& o = configs[static_cast<std::size_t>(i)];
    json rec;
    rec["penalty"] = to_string(o.penalty.family);
    rec["rho"] = o.penalty.rho;
    rec["tau"] = o.penalty.tau;
    rec["lambda_intercept"] = o.penalty.lambda_intercept;
    rec["lambda_diagonal"] = o.penalty.lambda_diagonal;
    rec["lambda_off_diagonal"] = o.penalty.lambda_off_diagonal;
    rec["mcp_gamma"] = o.penalty.mcp_gamma;
    try {
      const StructuredFit fit = fit_structured(fit_probs, fit_labels, method, o);
      const ProbMatrix calibrated = apply(fit.params, hold_probs);
      rec["objective_value"] = objective == "brier" ? brier(calibrated, hold_labels)
                                                    : logloss(calibrated, hold_labels);
    } catch (const std::exception& e) {
      rec["error"] = e.what();
    }
    results[static_cast<std::size_t>(i)] = std::move(rec);
  });

  std::sort(results.begin(), results.end(), [](const json& a, const json& b) {
    const bool ae = a.contains("error");
    const bool be = b.contains("error");
    if (ae != be) return be;  // failures last
    if (!ae && a.at("objective_value") != b.at("objective_value")) {
      return a.at("objective_value").get<double>() < b.at("objective_value").get<double>();
    }
    return a.dump() < b.dump();
  });
  for (std::size_t i = 0; i < results.size(); ++i) {
    results[i]["rank"] = i + 1;
  }

  json out;
  out["method"] = method_name;
  out["objective"] = objective;
  out["n_fit"] = fit_rows.size();
  out["n_holdout"] = holdout_rows.size();
  out["results"] = results;
  if (out_path.empty()) {
    std::cout << out.dump(2) << "\n";
  } else {
    write_json_file(out_path, out);
  }
  return kExitOk;
}

double quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

int cmd_bench(const std::string& config_path, const std::string& metric_choice,
              const std::string& out_path, bool quantiles) {
  const json config = read_json_file(config_path);
  if (!config.contains("datasets") || config.at("datasets").empty()) {
    throw InvalidInput("bench config needs a non-empty datasets list");
  }
  if (!config.contains("methods") || config.at("methods").empty()) {
    throw InvalidInput("bench config needs a non-empty methods list");
  }
  const json datasets = config.at("datasets");
  const json methods = config.at("methods");
  std::vector<std::string> metrics;
  if (metric_choice != "brier") metrics.push_back("logloss");
  if (metric_choice != "logloss") metrics.push_back("brier");

  struct Task {
    json dataset;
    json method;
  };
  std::vector<Task> tasks;
  for (const json& d : datasets) {
    for (const json& m : methods) tasks.push_back({d, m});
  }

  std::vector<std::vector<json>> slots(tasks.size());
  std::atomic<int> failures{0};
  parallel_for(static_cast<int>(tasks.size()), [&](int ti) {
    const Task& task = tasks[static_cast<std::size_t>(ti)];
    const std::string dataset_id = task.dataset.value("id", std::string("dataset"));
    const std::string method_str = task.method.value("method", std::string("sms"));
    const std::string method_name = task.method.value("name", method_str);
    std::vector<json>& out = slots[static_cast<std::size_t>(ti)];
    try {
      const Method method = method_from_string(method_str);
      const PredictionData cal = read_prediction_csv(task.dataset.at("cal").get<std::string>());
      const PredictionData test = read_prediction_csv(task.dataset.at("test").get<std::string>());
      if (!cal.labels || !test.labels) throw InvalidInput("bench files need labels");

      FitFlags flags;
      flags.method = method_str;
      flags.penalty = task.method.value("penalty", std::string("ridge"));
      flags.rho = task.method.value("rho", 1.0);
      flags.tau = task.method.value("tau", 1.0);
      flags.lambda_intercept = task.method.value("lambda_intercept", 1.0);
      flags.lambda_diagonal = task.method.value("lambda_diagonal", 1.0);
      flags.lambda_off_diagonal = task.method.value("lambda_off_diagonal", 1.0);
      flags.mcp_gamma = task.method.value("mcp_gamma", 3.0);
      flags.no_preprocess_ts = !task.method.value("preprocess_ts", true);
      flags.no_laplace = !task.method.value("laplace_smoothing", true);
      flags.seed = task.method.value("seed", static_cast<std::uint64_t>(0));
      flags.max_epochs = task.method.value("max_epochs", 500);

      // fit time only: excludes file IO and this process' startup
      const auto t0 = std::chrono::steady_clock::now();
      const CalibratorParams params = fit_dispatch(method, cal, flags);
      const auto t1 = std::chrono::steady_clock::now();
      const double fit_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();

      const ProbMatrix calibrated = apply(params, test.probs);
      const EvalReport before = evaluate(test.probs, *test.labels);
      const EvalReport after = evaluate(calibrated, *test.labels);
      for (const std::string& metric : metrics) {
        const double b = metric == "logloss" ? before.logloss : before.brier;
        const double a = metric == "logloss" ? after.logloss : after.brier;
        json rec;
        rec["dataset_id"] = dataset_id;
        rec["method"] = method_name;
        rec["metric"] = metric;
        rec["before"] = b;
        rec["after"] = a;
        rec["relative_improvement"] = relative_improvement(b, a);
        rec["fit_time_ms"] = fit_ms;
        rec["n_cal"] = cal.probs.n();
        rec["k"] = cal.probs.k();
        out.push_back(std::move(rec));
      }
    } catch (const std::exception& e) {
      json rec;
      rec["dataset_id"] = dataset_id;
      rec["method"] = method_name;
      rec["error"] = e.what();
      out.push_back(std::move(rec));
      failures.fetch_add(1);
    }
  });

  std::vector<json> records;
  for (const auto& slot : slots) {
    for (const json& r : slot) records.push_back(r);
  }
  std::sort(records.begin(), records.end(), [](const json& a, const json& b) {
    return std::make_tuple(a.value("dataset_id", std::string()), a.value("method", std::string()),
                           a.value("metric", std::string())) <
           std::make_tuple(b.value("dataset_id", std::string()), b.value("method", std::string()),
                           b.value("metric", std::string()));
  });

  json out;
  out["records"] = records;
  if (quantiles) {
    // Per-method summary for plotting: quantiles of the relative improvement
    // plus fitting time normalized per 1000 calibration samples, with error
    // bars std / sqrt(#datasets * #methods).
    const double denom =
        std::sqrt(static_cast<double>(datasets.size()) * static_cast<double>(methods.size()));
    json aggregates = json::array();
    for (const json& m : methods) {
      const std::string name = m.value("name", m.value("method", std::string("sms")));
      for (const std::string& metric : metrics) {
        std::vector<double> improvements;
        std::vector<double> times_per_1000;
        for (const json& r : records) {
          if (r.contains("error") || r.value("method", std::string()) != name ||
              r.value("metric", std::string()) != metric) {
            continue;
          }
          improvements.push_back(r.at("relative_improvement").get<double>());
          times_per_1000.push_back(r.at("fit_time_ms").get<double>() * 1000.0 /
                                   static_cast<double>(r.at("n_cal").get<std::int64_t>()));
        }
        if (improvements.empty()) continue;
        json agg;
        agg["method"] = name;
        agg["metric"] = metric;
        agg["quantiles"] = json{{"p10", quantile(improvements, 0.10)},
                                {"p25", quantile(improvements, 0.25)},
                                {"p50", quantile(improvements, 0.50)},
                                {"p75", quantile(improvements, 0.75)},
                                {"p90", quantile(improvements, 0.90)}};
        double mean_t = 0.0;
        for (double t : times_per_1000) mean_t += t;
        mean_t /= static_cast<double>(times_per_1000.size());
        double var_t = 0.0;
        for (double t : times_per_1000) var_t += (t - mean_t) * (t - mean_t);
        var_t = times_per_1000.size() > 1 ? var_t / static_cast<double>(times_per_1000.size() - 1)
                                          : 0.0;
        agg["fit_time_ms_per_1000"] = mean_t;
        agg["fit_time_stderr"] = std::sqrt(var_t) / denom;
        aggregates.push_back(std::move(agg));
      }
    }
    out["aggregates"] = aggregates;
  }

  if (out_path.empty()) {
    std::cout << out.dump(2) << "\n";
  } else {
    write_json_file(out_path, out);
  }
  // partial failures stay in the records; only a fully failed run errors out
  if (static_cast<std::size_t>(failures.load()) == tasks.size()) {
    return kExitNumeric;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"post-hoc probability calibration toolkit"};
  app.require_subcommand(1);

  auto* fit = app.add_subcommand("fit", "fit a calibrator on a prediction file");
  std::string fit_input, fit_out;
  FitFlags fit_flags;
  fit->add_option("--input", fit_input, "calibration prediction CSV with labels")->required();
  fit->add_option("--out", fit_out, "output parameter JSON path")->required();
  add_fit_flags(fit, fit_flags);

  auto* ap = app.add_subcommand("apply", "apply fitted parameters to a prediction file");
  std::string ap_params, ap_input, ap_out;
  ap->add_option("--params", ap_params, "parameter JSON from fit")->required();
  ap->add_option("--input", ap_input, "prediction CSV")->required();
  ap->add_option("--out", ap_out, "output CSV path")->required();

  auto* ev = app.add_subcommand("eval", "evaluate prediction files (JSON to stdout)");
  std::string ev_input, ev_before, ev_after, ev_metric = "both";
  ev->add_option("--input", ev_input, "prediction CSV with labels");
  ev->add_option("--before", ev_before, "baseline prediction CSV");
  ev->add_option("--after", ev_after, "recalibrated prediction CSV");
  ev->add_option("--metric", ev_metric, "logloss|brier|both")
      ->check(CLI::IsMember({"logloss", "brier", "both"}));

  auto* sy = app.add_subcommand("synth", "generate a synthetic Gaussian problem");
  std::string sy_preset, sy_spec, sy_out;
  Eigen::Index sy_train = 2000, sy_cal = 1000, sy_test = 10000;
  std::uint64_t sy_seed = 0;
  std::int64_t sy_mc = 200000;
  sy->add_option("--preset", sy_preset,
                 "binary-unequal-variance|multiclass-equal-cov|multiclass-unequal-cov|"
                 "many-class-small-n");
  sy->add_option("--spec", sy_spec, "mixture spec JSON path");
  sy->add_option("--out-dir", sy_out, "output directory")->required();
  sy->add_option("--n-train", sy_train, "training rows");
  sy->add_option("--n-cal", sy_cal, "calibration rows");
  sy->add_option("--n-test", sy_test, "test rows");
  sy->add_option("--seed", sy_seed, "sampling seed");
  sy->add_option("--n-mc", sy_mc, "Monte-Carlo budget for the reference loss");

  auto* sw = app.add_subcommand("sweep", "exhaustive hyperparameter grid evaluation");
  std::string sw_input, sw_grid, sw_objective = "logloss", sw_out;
  double sw_frac = 0.7;
  std::uint64_t sw_seed = 0;
  int sw_epochs = 500;
  sw->add_option("--input", sw_input, "prediction CSV with labels")->required();
  sw->add_option("--grid", sw_grid, "grid spec JSON path")->required();
  sw->add_option("--objective", sw_objective, "logloss|brier")
      ->check(CLI::IsMember({"logloss", "brier"}));
  sw->add_option("--cal-frac", sw_frac, "fraction used for fitting when no split column");
  sw->add_option("--seed", sw_seed, "split + solver seed");
  sw->add_option("--max-epochs", sw_epochs, "solver epoch budget per configuration");
  sw->add_option("--out", sw_out, "output JSON path (stdout when omitted)");

  auto* be = app.add_subcommand("bench", "run a datasets x methods benchmark");
  std::string be_config, be_metric = "both", be_out;
  bool be_quant = false;
  be->add_option("--config", be_config, "benchmark config JSON")->required();
  be->add_option("--metric", be_metric, "logloss|brier|both")
      ->check(CLI::IsMember({"logloss", "brier", "both"}));
  be->add_option("--out", be_out, "output JSON path (stdout when omitted)");
  be->add_flag("--quantiles", be_quant, "emit per-method quantile and timing aggregates");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
      return app.exit(e);
    }
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (app.got_subcommand(fit)) return cmd_fit(fit_input, fit_out, fit_flags);
    if (app.got_subcommand(ap)) return cmd_apply(ap_params, ap_input, ap_out);
    if (app.got_subcommand(ev)) {
      if (ev_input.empty() == (ev_before.empty() || ev_after.empty())) {
        std::cerr << "error: eval needs --input or a --before/--after pair\n";
        return kExitUsage;
      }
      return cmd_eval(ev_input, ev_before, ev_after, ev_metric);
    }
    if (app.got_subcommand(sy)) {
      return cmd_synth(sy_preset, sy_spec, sy_out, sy_train, sy_cal, sy_test, sy_seed, sy_mc);
    }
    if (app.got_subcommand(sw)) {
      return cmd_sweep(sw_input, sw_grid, sw_objective, sw_frac, sw_seed, sw_epochs, sw_out);
    }
    if (app.got_subcommand(be)) return cmd_bench(be_config, be_metric, be_out, be_quant);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const json::exception& e) {
    std::cerr << "error: malformed input: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DimensionMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DegenerateInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const NonFiniteError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitUsage;
}
