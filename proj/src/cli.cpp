#include "richiv/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>
#include <unistd.h>

#include "richiv/data.hpp"
#include "richiv/error.hpp"
#include "richiv/estimators.hpp"
#include "richiv/firststep.hpp"
#include "richiv/inference.hpp"
#include "richiv/kernels.hpp"
#include "richiv/random.hpp"
#include "richiv/simulation.hpp"

namespace richiv {

using json = nlohmann::ordered_json;

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorCode::IoError, "cannot open '" + tmp.string() + "' for writing", path);
    f << content;
    f.flush();
    if (!f) {
      f.close();
      std::error_code ec;
      fs::remove(tmp, ec);
      throw Error(ErrorCode::IoError, "write to '" + tmp.string() + "' failed", path);
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorCode::IoError, "cannot move output into place at '" + path + "'", path);
  }
}

namespace {

struct Options {
  std::string out;
  std::string format = "tsv";
  std::string config;
  std::optional<unsigned> threads;
  std::optional<int> kernel_order;
  std::optional<double> bandwidth_scale;

  // estimate
  std::string input;
  std::vector<std::string> estimators;
  std::string first_step = "nw";
  std::optional<std::string> variance;
  std::uint64_t seed = 0;
  int folds = 0;
  int splits = 100;
  int mlp_hidden = 100;
  int mlp_epochs = 200;

  // simulate
  SimConfig sim;
  std::size_t reps = 500;
  std::vector<std::string> roster;
  std::string dump;
  bool with_se = false;
};

std::string config_value_string(const json& v, const std::string& key) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  if (v.is_number_float()) return format_number(v.get<double>());
  throw Error(ErrorCode::InvalidConfig, "config value for '" + key + "' must be a string, number or boolean",
              key);
}

// Fills options that were not given on the command line from a JSON object
// whose keys are long flag names without the leading dashes.
void apply_config_file(CLI::App& sub, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config file '" + path + "'", path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, std::string("config file is not valid JSON: ") + e.what(), path);
  }
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "config file must hold a JSON object", path);

  for (const auto& [key, value] : j.items()) {
    if (key == "config") throw Error(ErrorCode::InvalidConfig, "config files cannot nest", path);
    CLI::Option* opt = nullptr;
    try {
      opt = sub.get_option("--" + key);
    } catch (const CLI::OptionNotFound&) {
      throw Error(ErrorCode::InvalidConfig,
                  "unknown key '" + key + "' for subcommand " + sub.get_name(), path);
    }
    if (opt->count() > 0) continue;
    std::vector<std::string> values;
    if (value.is_array()) {
      for (const auto& v : value) values.push_back(config_value_string(v, key));
    } else {
      values.push_back(config_value_string(value, key));
    }
    try {
      opt->add_result(values);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw Error(ErrorCode::InvalidConfig, "bad value for '" + key + "': " + e.what(), path);
    }
  }
}

unsigned resolve_threads(const std::optional<unsigned>& flag) {
  unsigned n = flag ? *flag : std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("RICHIV_THREADS"); env && *env) {
    char* end = nullptr;
    const unsigned long cap = std::strtoul(env, &end, 10);
    if (*end != '\0' || cap == 0) {
      throw Error(ErrorCode::InvalidConfig, "RICHIV_THREADS must be a positive integer", "RICHIV_THREADS");
    }
    n = std::min<unsigned long>(n, cap);
  }
  return std::max(1u, n);
}

NwOptions nw_options(const Options& o) {
  NwOptions nw;
  nw.order.order = o.kernel_order;
  nw.rule.scale = o.bandwidth_scale;
  return nw;
}

MlpConfig mlp_config(const Options& o) {
  MlpConfig cfg;
  cfg.hidden_units = o.mlp_hidden;
  cfg.max_epochs = o.mlp_epochs;
  cfg.validate();
  return cfg;
}

void emit(const Options& o, const std::string& content, std::ostream& out) {
  if (o.out.empty() || o.out == "-") {
    out << content;
  } else {
    write_file_atomic(o.out, content);
  }
}

std::string json_text(const json& j) { return j.dump(2) + "\n"; }

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// ---- estimate -------------------------------------------------------------

constexpr std::string_view kOraclePrefix = "oracle:";

FirstStepFit fit_first_step(const Dataset& ds, const Options& o, const RegressorSpec& spec) {
  const std::string& fs = o.first_step;
  if (fs == "nw") return fit_nw(ds, nw_options(o));
  if (fs == "probit") return fit_probit(ds, spec).second;
  if (fs == "cells") {
    std::vector<std::size_t> key(ds.d());
    for (std::size_t j = 0; j < key.size(); ++j) key[j] = j;
    return fit_cell_means(ds, key);
  }
  if (fs == "mlp") return fit_mlp(ds, mlp_config(o), derive_seed(o.seed, 0));
  if (fs.starts_with(kOraclePrefix)) {
    const std::string path = fs.substr(kOraclePrefix.size());
    const RawTable table = read_csv_file(path);
    if (table.columns.size() != 1) {
      throw Error(ErrorCode::InvalidConfig, "oracle file must have exactly one column", path);
    }
    const auto& col = table.columns.front();
    if (col.size() != ds.n()) {
      throw Error(ErrorCode::LengthMismatch,
                  "oracle file has " + std::to_string(col.size()) + " values for " +
                      std::to_string(ds.n()) + " observations",
                  path);
    }
    return oracle(ds.n(), Eigen::Map<const VectorXd>(col.data(), static_cast<Eigen::Index>(col.size())));
  }
  throw Error(ErrorCode::InvalidConfig, "unknown first step '" + fs + "'", "--first-step");
}

std::unique_ptr<NuisanceLearner> dml_learner(const Dataset& ds, const Options& o) {
  if (o.first_step == "nw") return std::make_unique<NwLearner>(nw_options(o));
  if (o.first_step == "mlp") return std::make_unique<MlpLearner>(mlp_config(o));
  if (o.first_step == "cells") {
    std::vector<std::size_t> key(ds.d());
    for (std::size_t j = 0; j < key.size(); ++j) key[j] = j;
    return std::make_unique<CellMeansLearner>(key);
  }
  throw Error(ErrorCode::InvalidConfig, "dml needs --first-step nw, mlp or cells", "--first-step");
}

std::string resolve_variance(const Options& o, bool needs_first_step) {
  if (o.variance) {
    if (*o.variance == "corrected" && needs_first_step && o.first_step != "nw") {
      throw Error(ErrorCode::InvalidConfig, "corrected variance requires the nw first step", "--variance");
    }
    return *o.variance;
  }
  return o.first_step == "nw" ? "corrected" : "hc0";
}

struct EstimateRow {
  std::string estimator;
  IVEstimate est;
  std::optional<VarianceEstimate> var;
  std::vector<std::string> notes;
  double seconds = 0.0;
};

int cmd_estimate(Options& o, std::ostream& out) {
  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();
  if (o.input.empty()) throw Error(ErrorCode::InvalidConfig, "--input is required", "--input");
  if (o.estimators.empty()) o.estimators = {"ir"};

  const Dataset ds = validate(read_csv_file(o.input));
  const RegressorSpec spec = RegressorSpec::identity(ds.d());
  bool needs_first_step = false;
  for (const auto& e : o.estimators) needs_first_step |= (e == "ir" || e == "cf");
  const std::string variance = resolve_variance(o, needs_first_step);
  if (variance == "cluster" && !ds.has_clusters()) {
    throw Error(ErrorCode::InvalidConfig, "cluster variance needs a cluster column", "--variance");
  }

  std::optional<FirstStepFit> fs;
  double fs_seconds = 0.0;
  if (needs_first_step) {
    const auto t0 = clock::now();
    fs = fit_first_step(ds, o, spec);
    fs_seconds = std::chrono::duration<double>(clock::now() - t0).count();
  }

  auto plain_variance = [&](const IVEstimate& est) {
    if (variance == "cluster") return naive_iv_variance(est, std::span<const int>(ds.cluster()));
    return naive_iv_variance(est);
  };

  std::vector<EstimateRow> rows;
  for (const auto& name : o.estimators) {
    const auto t0 = clock::now();
    EstimateRow row;
    row.estimator = name;
    if (name == "live") {
      row.est = live_estimate(ds, spec);
      row.var = plain_variance(row.est);
    } else if (name == "ir" || name == "cf") {
      row.est = name == "ir" ? ir_estimate(ds, spec, *fs) : cf_estimate(ds, spec, *fs);
      if (variance == "corrected") {
        row.var = name == "ir" ? ir_variance(row.est, *fs->smoother, ds) : cf_variance(row.est, *fs->smoother, ds);
      } else {
        row.var = plain_variance(row.est);
        row.notes.emplace_back("standard error ignores first-step estimation");
      }
    } else if (name == "psr") {
      row.est = psr_estimate(ds);
      row.var = plain_variance(row.est);
    } else if (name == "dml") {
      const auto learner = dml_learner(ds, o);
      std::optional<CrossFitPlan> plan;
      if (o.folds > 0) plan = CrossFitPlan{o.folds, o.splits, o.seed};
      row.est = dml_estimate(ds, *learner, plan, o.seed);
      if (!plan) {
        row.var = plain_variance(row.est);
      } else {
        row.notes.emplace_back("no standard error for cross-fit aggregates");
      }
    } else {
      throw Error(ErrorCode::InvalidConfig, "unknown estimator '" + name + "'", "--estimator");
    }
    if (row.var && variance == "corrected" && name != "ir" && name != "cf") {
      row.notes.emplace_back("corrected variance applies to ir/cf only; reporting hc0");
    }
    row.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    rows.push_back(std::move(row));
  }
  const double total = std::chrono::duration<double>(clock::now() - t_start).count();

  std::string text;
  if (o.format == "json") {
    json report;
    report["command"] = "estimate";
    report["input"] = o.input;
    report["n"] = ds.n();
    report["d"] = ds.d();
    report["clusters"] = ds.has_clusters() ? json(ds.n_clusters()) : json(nullptr);
    if (fs) {
      json f;
      f["method"] = first_step_name(fs->method);
      f["iterations"] = fs->diagnostics.iterations;
      f["final_loss"] = number_or_null(fs->diagnostics.final_loss);
      f["flags"] = fs->diagnostics.flags;
      if (fs->smoother) {
        f["kernel_order"] = fs->smoother->kernel.order();
        f["bandwidths"] = std::vector<double>(fs->smoother->bandwidths.begin(), fs->smoother->bandwidths.end());
      }
      f["seconds"] = fs_seconds;
      report["first_step"] = f;
    }
    json results = json::array();
    for (const auto& r : rows) {
      json j;
      j["estimator"] = r.estimator;
      j["alpha"] = number_or_null(r.est.alpha());
      j["se"] = r.var ? number_or_null(r.var->se[0]) : json(nullptr);
      j["variance"] = r.var ? json(variance_method_name(r.var->method)) : json(nullptr);
      json coef = json::object();
      for (Eigen::Index k = 0; k < r.est.beta.size(); ++k) {
        const std::string label = k < static_cast<Eigen::Index>(r.est.labels.size())
                                      ? r.est.labels[static_cast<std::size_t>(k)]
                                      : "b" + std::to_string(k);
        coef[label] = number_or_null(r.est.beta[k]);
      }
      j["coefficients"] = coef;
      if (!r.est.split_alphas.empty()) j["split_alphas"] = r.est.split_alphas;
      std::vector<std::string> notes = r.notes;
      if (r.var) notes.insert(notes.end(), r.var->warnings.begin(), r.var->warnings.end());
      j["notes"] = notes;
      j["seconds"] = r.seconds;
      results.push_back(j);
    }
    report["results"] = results;
    report["seconds"] = total;
    text = json_text(report);
  } else {
    std::ostringstream s;
    s << "estimator\talpha\tse\tvariance\n";
    for (const auto& r : rows) {
      s << r.estimator << '\t' << format_number(r.est.alpha()) << '\t'
        << (r.var ? format_number(r.var->se[0]) : "NA") << '\t'
        << (r.var ? variance_method_name(r.var->method) : "NA") << '\n';
    }
    text = s.str();
  }
  emit(o, text, out);
  return 0;
}

// ---- simulate -------------------------------------------------------------

int cmd_simulate(Options& o, std::ostream& out) {
  o.sim.validate();
  if (o.reps == 0) throw Error(ErrorCode::InvalidConfig, "--reps must be positive", "--reps");
  if (o.roster.empty()) o.roster = {"live", "psr", "oracle-ir", "oracle-cf", "nw-ir", "nw-cf"};
  std::vector<SimEstimator> roster;
  for (const auto& tag : o.roster) {
    const auto e = parse_sim_estimator(tag);
    if (!e) throw Error(ErrorCode::InvalidConfig, "unknown estimator tag '" + tag + "'", "--estimator");
    roster.push_back(*e);
  }
  SimOptions so;
  so.nw = nw_options(o);
  so.mlp = mlp_config(o);
  so.compute_se = o.with_se;
  so.threads = resolve_threads(o.threads);

  const auto results = run_monte_carlo(o.sim, roster, o.reps, so);
  const auto summary = summarize(results);

  std::string text;
  if (o.format == "json") {
    json report;
    json cfg;
    cfg["d"] = o.sim.d;
    cfg["n"] = o.sim.n;
    cfg["psi"] = o.sim.psi;
    cfg["kappa_at"] = o.sim.kappa_at;
    cfg["kappa_nt"] = o.sim.kappa_nt;
    cfg["alpha_nt"] = o.sim.alpha_nt;
    cfg["alpha_c"] = o.sim.alpha_c;
    cfg["alpha_at"] = o.sim.alpha_at;
    cfg["seed"] = o.sim.seed;
    cfg["reps"] = o.reps;
    report["config"] = cfg;
    json rows = json::array();
    for (const auto& r : summary) {
      rows.push_back({{"estimator", sim_estimator_name(r.estimator)},
                      {"median", r.median},
                      {"iqr", r.iqr},
                      {"errors", r.errors},
                      {"reps", r.reps}});
    }
    report["summary"] = rows;
    text = json_text(report);
  } else {
    std::ostringstream s;
    s << "estimator\tmedian\tiqr\terrors\treps\n";
    for (const auto& r : summary) {
      s << sim_estimator_name(r.estimator) << '\t' << format_number(r.median) << '\t'
        << format_number(r.iqr) << '\t' << r.errors << '\t' << r.reps << '\n';
    }
    text = s.str();
  }

  if (!o.dump.empty()) {
    std::ostringstream d;
    for (const auto& r : results) {
      json j;
      j["rep"] = r.rep;
      j["estimator"] = sim_estimator_name(r.estimator);
      j["alpha"] = number_or_null(r.alpha);
      if (o.with_se) j["se"] = number_or_null(r.se);
      j["status"] = r.status;
      d << j.dump() << '\n';
    }
    write_file_atomic(o.dump, d.str());
  }
  emit(o, text, out);
  return 0;
}

// ---- kernel-check ---------------------------------------------------------

int cmd_kernel_check(Options& o, std::ostream& out) {
  std::string text;
  if (o.format == "json") {
    json kernels = json::array();
    for (int m = 2; m <= 12; m += 2) {
      const auto k = make_epanechnikov(m);
      json j;
      j["order"] = m;
      std::vector<std::string> exact;
      for (const auto& r : k.exact_coeffs()) exact.push_back(r.str());
      j["coefficients"] = exact;
      std::vector<double> moments;
      for (int p = 0; p <= m; ++p) moments.push_back(std::abs(kernel_moment(k, p) - (p == 0 ? 1.0 : 0.0)));
      j["abs_moments"] = moments;
      kernels.push_back(j);
    }
    text = json_text(json{{"kernels", kernels}});
  } else {
    std::ostringstream s;
    s << "order\tj\tabs_moment\n";
    for (int m = 2; m <= 12; m += 2) {
      const auto k = make_epanechnikov(m);
      // j = 0 reports |int K - 1|; j = m is the first non-vanishing moment
      for (int p = 0; p <= m; ++p) {
        s << m << '\t' << p << '\t' << format_number(std::abs(kernel_moment(k, p) - (p == 0 ? 1.0 : 0.0)))
          << '\n';
      }
    }
    text = s.str();
  }
  emit(o, text, out);
  return 0;
}

void write_error(std::ostream& err, std::string_view code, const std::string& message,
                 const std::string& context, const std::vector<std::size_t>& rows) {
  json j;
  j["code"] = code;
  j["message"] = message;
  j["context"] = context;
  j["rows"] = rows;
  err << json{{"error", j}}.dump() << '\n';
}

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--out", o.out, "Output path (default: stdout)");
  sub->add_option("--format", o.format, "Output format")->check(CLI::IsMember({"tsv", "json"}));
  sub->add_option("--config", o.config, "JSON file of option values; flags take precedence");
}

void add_smoothing(CLI::App* sub, Options& o) {
  sub->add_option("--kernel-order", o.kernel_order, "Even kernel order (default: smallest even >= d+1)");
  sub->add_option("--bandwidth-scale", o.bandwidth_scale, "Bandwidth constant (default 1.1 + 0.725 d)");
  sub->add_option("--mlp-hidden", o.mlp_hidden, "Hidden units of the network first step")
      ->check(CLI::PositiveNumber);
  sub->add_option("--mlp-epochs", o.mlp_epochs, "Training epochs of the network first step")
      ->check(CLI::PositiveNumber);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Treatment effect estimation with instrument residuals and control functions"};
  app.require_subcommand(1);

  auto* est = app.add_subcommand("estimate", "Estimate the treatment effect on a CSV dataset");
  add_common(est, o);
  add_smoothing(est, o);
  est->add_option("--input", o.input, "CSV with columns y,t,z,c1..cd[,cluster]");
  est->add_option("--estimator", o.estimators, "live|ir|cf|psr|dml (repeatable)")
      ->check(CLI::IsMember({"live", "ir", "cf", "psr", "dml"}));
  est->add_option("--first-step", o.first_step, "nw|probit|cells|mlp|oracle:<path>");
  est->add_option("--variance", o.variance, "corrected|hc0|cluster")
      ->check(CLI::IsMember({"corrected", "hc0", "cluster"}));
  est->add_option("--seed", o.seed, "Seed for network training and fold assignment");
  est->add_option("--folds", o.folds, "Cross-fitting folds for dml (0: no cross-fitting)")
      ->check(CLI::NonNegativeNumber);
  est->add_option("--splits", o.splits, "Random fold splits for cross-fit dml")->check(CLI::PositiveNumber);

  auto* sim = app.add_subcommand("simulate", "Monte Carlo study on the simulation design");
  add_common(sim, o);
  add_smoothing(sim, o);
  sim->add_option("--d", o.sim.d, "Number of covariates")->check(CLI::PositiveNumber);
  sim->add_option("--n", o.sim.n, "Sample size")->check(CLI::PositiveNumber);
  sim->add_option("--psi", o.sim.psi, "Nonlinearity of the instrument propensity");
  sim->add_option("--kappa-at", o.sim.kappa_at, "Always-taker share");
  sim->add_option("--kappa-nt", o.sim.kappa_nt, "Never-taker share");
  sim->add_option("--alpha-nt", o.sim.alpha_nt, "Effect for never takers");
  sim->add_option("--alpha-c", o.sim.alpha_c, "Effect for compliers");
  sim->add_option("--alpha-at", o.sim.alpha_at, "Effect for always takers");
  sim->add_option("--seed", o.sim.seed, "Master seed");
  sim->add_option("--reps", o.reps, "Replications");
  sim->add_option("--estimator", o.roster, "Estimator tags (repeatable)");
  sim->add_option("--threads", o.threads, "Worker threads (default: all cores, capped by RICHIV_THREADS)")
      ->check(CLI::PositiveNumber);
  sim->add_option("--dump", o.dump, "Write per-replication results as JSON lines");
  sim->add_flag("--with-se", o.with_se, "Compute a standard error in every replication");

  auto* kc = app.add_subcommand("kernel-check", "Moment table of the higher-order kernels");
  add_common(kc, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    write_error(err, "UsageError", e.what(), "", {});
    return 2;
  }

  try {
    for (auto* sub : {est, sim, kc}) {
      if (sub->parsed() && !o.config.empty()) apply_config_file(*sub, o.config);
    }
    if (est->parsed()) return cmd_estimate(o, out);
    if (sim->parsed()) return cmd_simulate(o, out);
    return cmd_kernel_check(o, out);
  } catch (const Error& e) {
    write_error(err, error_code_name(e.code()), e.what(), e.context(), e.rows());
    return 1;
  } catch (const std::exception& e) {
    write_error(err, "Internal", e.what(), "", {});
    return 1;
  }
}

}  // namespace richiv
