#include "hctb/hctb.h"

#include <cstdlib>
#include <cstring>
#include <limits>
#include <new>
#include <string>

#include "json.hpp"

#include "analyze.hpp"
#include "dataset.hpp"
#include "error.hpp"
#include "frt.hpp"
#include "match.hpp"
#include "methods.hpp"
#include "sim.hpp"
#include "version.hpp"

using nlohmann::ordered_json;

struct hctb_dataset {
  hctb::TrialDataset ds;
};

namespace {

thread_local std::string g_last_error;

hctb_status to_c_status(hctb::Status s) {
  switch (s) {
    case hctb::Status::ok:
      return HCTB_OK;
    case hctb::Status::invalid_argument:
      return HCTB_INVALID_ARGUMENT;
    case hctb::Status::io:
      return HCTB_IO;
    case hctb::Status::parse:
      return HCTB_PARSE;
    case hctb::Status::validation:
      return HCTB_VALIDATION;
    case hctb::Status::numeric:
      return HCTB_NUMERIC;
    case hctb::Status::internal:
      return HCTB_INTERNAL;
  }
  return HCTB_INTERNAL;
}

// Every entry point funnels through here so exceptions can never cross the
// C boundary.
template <typename Fn>
hctb_status guarded(Fn&& fn) {
  try {
    fn();
    return HCTB_OK;
  } catch (const hctb::Error& e) {
    g_last_error = e.what();
    return to_c_status(e.status);
  } catch (const nlohmann::json::parse_error& e) {
    g_last_error = e.what();
    return HCTB_PARSE;
  } catch (const nlohmann::json::exception& e) {
    g_last_error = e.what();
    return HCTB_INVALID_ARGUMENT;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return HCTB_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return HCTB_INTERNAL;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

ordered_json parse_config(const char* config_json) {
  if (!config_json || !*config_json) return ordered_json::object();
  ordered_json j = ordered_json::parse(config_json);
  if (!j.is_object())
    hctb::fail(hctb::Status::parse, "config must be a JSON object");
  return j;
}

template <typename T>
T get_or(const ordered_json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  return it->get<T>();
}

std::vector<std::string> parse_methods(const ordered_json& j) {
  auto expand = [](const std::string& name) -> std::vector<std::string> {
    if (name == "all") return hctb::table_methods();
    return {name};
  };
  auto it = j.find("methods");
  if (it == j.end())
    hctb::fail(hctb::Status::invalid_argument, "config: methods is required");
  std::vector<std::string> out;
  if (it->is_string()) {
    out = expand(it->get<std::string>());
  } else if (it->is_array()) {
    for (const auto& m : *it)
      for (auto& name : expand(m.get<std::string>())) out.push_back(name);
  } else {
    hctb::fail(hctb::Status::invalid_argument,
               "config: methods must be a string or array");
  }
  return out;
}

std::vector<hctb::Estimand> parse_estimands(const ordered_json& j) {
  std::vector<hctb::Estimand> out;
  auto it = j.find("estimands");
  if (it == j.end()) return {hctb::Estimand::rd};
  if (it->is_string()) {
    out.push_back(hctb::parse_estimand(it->get<std::string>()));
  } else if (it->is_array()) {
    for (const auto& e : *it)
      out.push_back(hctb::parse_estimand(e.get<std::string>()));
  } else {
    hctb::fail(hctb::Status::invalid_argument,
               "config: estimands must be a string or array");
  }
  return out;
}

void fill_method_options(const ordered_json& j, hctb::MethodOptions& opt) {
  opt.alpha = get_or(j, "alpha", opt.alpha);
  opt.gamma = get_or(j, "gamma", opt.gamma);
  opt.adaptive = get_or(j, "adaptive", opt.adaptive);
  opt.conformal.folds = get_or(j, "folds", opt.conformal.folds);
  opt.conformal.bootstrap_reps =
      get_or(j, "adaptive_bootstrap", opt.conformal.bootstrap_reps);
  if (auto it = j.find("gamma_grid"); it != j.end() && !it->is_null())
    opt.conformal.gamma_grid = it->get<std::vector<double>>();
  opt.nuisance.fit_propensity =
      get_or(j, "fit_propensity", opt.nuisance.fit_propensity);
  opt.nuisance.allow_degenerate =
      get_or(j, "allow_degenerate", opt.nuisance.allow_degenerate);
  const std::string r_model = get_or<std::string>(j, "r_model", "plugin");
  if (r_model == "plugin")
    opt.nuisance.r_model = hctb::NuisanceConfig::RModel::plugin;
  else if (r_model == "one")
    opt.nuisance.r_model = hctb::NuisanceConfig::RModel::one;
  else
    hctb::fail(hctb::Status::invalid_argument,
               "config: r_model must be 'plugin' or 'one'");
}

hctb::FrtSpec::Refit parse_refit(const ordered_json& j) {
  const std::string refit = get_or<std::string>(j, "refit", "full");
  if (refit == "full") return hctb::FrtSpec::Refit::full;
  if (refit == "fixed-gamma") return hctb::FrtSpec::Refit::fixed_gamma;
  hctb::fail(hctb::Status::invalid_argument,
             "config: refit must be 'full' or 'fixed-gamma'");
}

ordered_json number_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

const char* estimand_str(hctb::Estimand e) { return hctb::estimand_name(e); }

ordered_json analyze_to_json(const hctb::AnalyzeResult& res,
                             std::uint64_t seed, double alpha) {
  ordered_json out;
  out["command"] = "analyze";
  out["version"] = HCTB_VERSION_STRING;
  out["seed"] = seed;
  out["alpha"] = alpha;
  ordered_json rows = ordered_json::array();
  for (const auto& r : res.rows) {
    ordered_json row;
    row["method"] = r.method;
    row["estimand"] = estimand_str(r.estimand);
    row["point"] = r.point;
    row["se"] = r.se;
    row["ci_low"] = r.ci_low;
    row["ci_high"] = r.ci_high;
    row["p_asym"] = r.p_asym;
    row["frt_p"] = number_or_null(r.frt_p);
    row["frt_failures"] = r.frt_failures;
    row["frt_approximate"] = r.frt_approximate;
    row["n_ec"] = r.n_borrowed;
    row["ess_ec"] = r.ess;
    row["gamma"] = number_or_null(r.gamma_used);
    row["bootstrap_failures"] = r.bootstrap_failures;
    row["eb_fallback"] = r.eb_fallback;
    row["boundary_clipped"] = r.boundary_clipped;
    rows.push_back(std::move(row));
  }
  out["rows"] = std::move(rows);
  out["warnings"] = res.warnings;
  return out;
}

hctb::ScenarioRequest parse_scenario_request(const ordered_json& j) {
  hctb::ScenarioRequest req;
  req.config.n_r = get_or(j, "n_r", req.config.n_r);
  req.config.n1 = get_or(j, "n1", req.config.n1);
  req.config.n0 = get_or(j, "n0", req.config.n0);
  req.config.n_e = get_or(j, "n_e", req.config.n_e);
  req.config.p = get_or(j, "p", req.config.p);
  req.config.b = get_or(j, "b", req.config.b);
  req.config.rho = get_or(j, "rho", req.config.rho);
  req.config.sm_correct = get_or(j, "sm_correct", req.config.sm_correct);
  req.config.om_correct = get_or(j, "om_correct", req.config.om_correct);
  req.config.null_hypothesis =
      get_or(j, "null_hypothesis", req.config.null_hypothesis);
  req.config.target_p0 = get_or(j, "target_p0", req.config.target_p0);
  req.config.target_p1 = get_or(j, "target_p1", req.config.target_p1);
  req.config.seed = get_or<std::uint64_t>(j, "seed", req.config.seed);
  req.methods = parse_methods(j);
  req.estimands = parse_estimands(j);
  req.reps = get_or(j, "reps", req.reps);
  req.alpha = get_or(j, "alpha", req.alpha);
  req.frt_reps = get_or(j, "frt_reps", req.frt_reps);
  req.with_frt = get_or(j, "with_frt", req.frt_reps > 0);
  if (req.frt_reps <= 0) req.with_frt = false;
  req.threads = get_or(j, "threads", req.threads);
  fill_method_options(j, req.method_options);
  return req;
}

ordered_json simulate_to_json(const hctb::ScenarioMetrics& m) {
  ordered_json out;
  out["command"] = "simulate";
  out["version"] = HCTB_VERSION_STRING;
  out["scenario"] = hctb::scenario_label(m.config);
  out["seed"] = m.config.seed;
  ordered_json truth;
  truth["eta0"] = m.truth.eta0;
  truth["b00"] = m.truth.b00;
  truth["b10"] = m.truth.b10;
  truth["theta0"] = m.truth.theta0;
  truth["theta1"] = m.truth.theta1;
  truth["tau_rd"] = m.truth.tau_rd;
  truth["tau_rr"] = m.truth.tau_rr;
  truth["tau_or"] = m.truth.tau_or;
  out["truth"] = std::move(truth);
  ordered_json cells = ordered_json::array();
  for (const auto& c : m.cells) {
    ordered_json cell;
    cell["method"] = c.method;
    cell["estimand"] = estimand_str(c.estimand);
    cell["true_value"] = c.true_value;
    cell["bias"] = number_or_null(c.bias);
    cell["bias_mcse"] = number_or_null(c.bias_mcse);
    cell["variance"] = number_or_null(c.variance);
    cell["variance_mcse"] = number_or_null(c.variance_mcse);
    cell["mse"] = number_or_null(c.mse);
    cell["mse_mcse"] = number_or_null(c.mse_mcse);
    cell["rel_mse"] = number_or_null(c.rel_mse);
    cell["rejection"] = number_or_null(c.rejection);
    cell["rejection_mcse"] = number_or_null(c.rejection_mcse);
    cell["frt_rejection"] = number_or_null(c.frt_rejection);
    cell["frt_rejection_mcse"] = number_or_null(c.frt_rejection_mcse);
    cell["mean_selected"] = number_or_null(c.mean_selected);
    cell["mean_selected_mcse"] = number_or_null(c.mean_selected_mcse);
    cell["failures"] = c.failures;
    cell["reps_used"] = c.reps_used;
    cells.push_back(std::move(cell));
  }
  out["cells"] = std::move(cells);
  ordered_json rows = ordered_json::array();
  for (const auto& r : hctb::metrics_to_rows(m)) {
    ordered_json row;
    row["scenario"] = r.scenario;
    row["method"] = r.method;
    row["estimand"] = r.estimand;
    row["metric"] = r.metric;
    row["value"] = number_or_null(r.value);
    row["mc_se"] = number_or_null(r.mc_se);
    rows.push_back(std::move(row));
  }
  out["rows"] = std::move(rows);
  return out;
}

}  // namespace

extern "C" {

const char* hctb_version(void) { return HCTB_VERSION_STRING; }

const char* hctb_last_error(void) { return g_last_error.c_str(); }

void hctb_string_free(char* s) { std::free(s); }

hctb_status hctb_dataset_load_csv(const char* path, int validate_trial,
                                  hctb_dataset** out) {
  return guarded([&] {
    if (!path || !out)
      hctb::fail(hctb::Status::invalid_argument, "null argument");
    auto holder = std::make_unique<hctb_dataset>();
    holder->ds = hctb::load_csv(path, {}, validate_trial != 0);
    *out = holder.release();
  });
}

hctb_status hctb_dataset_from_arrays(int n, int p, const double* x,
                                     const int* y, const int* a, const int* s,
                                     hctb_dataset** out) {
  return guarded([&] {
    if (n < 1 || p < 1 || !x || !y || !a || !s || !out)
      hctb::fail(hctb::Status::invalid_argument,
                 "from_arrays: null or empty input");
    Eigen::MatrixXd xm(n, p);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < p; ++j) xm(i, j) = x[static_cast<size_t>(i) * p + j];
    Eigen::VectorXi yv(n), av(n), sv(n);
    for (int i = 0; i < n; ++i) {
      yv[i] = y[i];
      av[i] = a[i];
      sv[i] = s[i];
    }
    auto holder = std::make_unique<hctb_dataset>();
    holder->ds = hctb::from_arrays(xm, yv, av, sv);
    *out = holder.release();
  });
}

hctb_status hctb_dataset_write_csv(const hctb_dataset* ds, const char* path) {
  return guarded([&] {
    if (!ds || !path)
      hctb::fail(hctb::Status::invalid_argument, "null argument");
    hctb::write_csv(ds->ds, path);
  });
}

void hctb_dataset_free(hctb_dataset* ds) { delete ds; }

int hctb_dataset_n(const hctb_dataset* ds) { return ds ? ds->ds.n() : 0; }
int hctb_dataset_p(const hctb_dataset* ds) { return ds ? ds->ds.p() : 0; }
int hctb_dataset_n_rct(const hctb_dataset* ds) {
  return ds ? ds->ds.n_rct() : 0;
}
int hctb_dataset_n_ec(const hctb_dataset* ds) { return ds ? ds->ds.n_ec() : 0; }

hctb_status hctb_analyze(const hctb_dataset* ds, const char* config_json,
                         char** result_json) {
  return guarded([&] {
    if (!ds || !result_json)
      hctb::fail(hctb::Status::invalid_argument, "null argument");
    const ordered_json j = parse_config(config_json);
    hctb::AnalyzeRequest req;
    req.methods = parse_methods(j);
    req.estimands = parse_estimands(j);
    fill_method_options(j, req.options);
    req.with_frt = get_or(j, "with_frt", false);
    req.frt_reps = get_or(j, "frt_reps", req.frt_reps);
    req.refit = parse_refit(j);
    const std::string se = get_or<std::string>(j, "se", "eif");
    if (se == "eif")
      req.se_mode = hctb::AnalyzeRequest::SeMode::eif;
    else if (se == "bootstrap")
      req.se_mode = hctb::AnalyzeRequest::SeMode::bootstrap;
    else
      hctb::fail(hctb::Status::invalid_argument,
                 "config: se must be 'eif' or 'bootstrap'");
    req.bootstrap_reps = get_or(j, "bootstrap_reps", req.bootstrap_reps);
    req.seed = get_or<std::uint64_t>(j, "seed", 0);
    req.threads = get_or(j, "threads", req.threads);
    const hctb::AnalyzeResult res = hctb::analyze(ds->ds, req);
    *result_json =
        dup_string(analyze_to_json(res, req.seed, req.options.alpha).dump());
  });
}

hctb_status hctb_frt(const hctb_dataset* ds, const char* config_json,
                     char** result_json) {
  return guarded([&] {
    if (!ds || !result_json)
      hctb::fail(hctb::Status::invalid_argument, "null argument");
    const ordered_json j = parse_config(config_json);
    hctb::FrtSpec spec;
    spec.method = get_or<std::string>(j, "method", spec.method);
    spec.estimand =
        hctb::parse_estimand(get_or<std::string>(j, "estimand", "rd"));
    spec.reps = get_or(j, "reps", spec.reps);
    spec.seed = get_or<std::uint64_t>(j, "seed", 0);
    spec.refit = parse_refit(j);
    hctb::MethodOptions opt;
    fill_method_options(j, opt);
    spec.gamma = opt.gamma;
    spec.adaptive = opt.adaptive;
    spec.conformal = opt.conformal;
    spec.nuisance = opt.nuisance;
    spec.threads = get_or(j, "threads", spec.threads);
    const bool exact = get_or(j, "exact", false);

    ordered_json out;
    out["command"] = "frt";
    out["version"] = HCTB_VERSION_STRING;
    out["method"] = spec.method;
    out["estimand"] = estimand_str(spec.estimand);
    out["seed"] = spec.seed;
    out["exact"] = exact;
    if (exact) {
      out["reps"] = nullptr;
      out["p"] = hctb::frt_exact(ds->ds, spec);
      out["observed_stat"] = hctb::frt_statistic(ds->ds, spec);
      out["failures"] = nullptr;
      out["approximate"] = false;
    } else {
      const hctb::FrtResult res = hctb::frt_pvalue(ds->ds, spec);
      out["reps"] = spec.reps;
      out["p"] = res.p;
      out["observed_stat"] = res.observed_stat;
      out["failures"] = res.failures;
      out["approximate"] = res.approximate;
    }
    *result_json = dup_string(out.dump());
  });
}

hctb_status hctb_simulate(const char* config_json, char** result_json) {
  return guarded([&] {
    if (!result_json)
      hctb::fail(hctb::Status::invalid_argument, "null argument");
    const ordered_json j = parse_config(config_json);
    const hctb::ScenarioRequest req = parse_scenario_request(j);
    *result_json = dup_string(simulate_to_json(hctb::run_scenario(req)).dump());
  });
}

hctb_status hctb_match(const hctb_dataset* rct, const hctb_dataset* pool,
                       const char* config_json, char** result_json) {
  return guarded([&] {
    if (!rct || !pool || !result_json)
      hctb::fail(hctb::Status::invalid_argument, "null argument");
    const ordered_json j = parse_config(config_json);
    const int ratio = get_or(j, "ratio", 1);
    const hctb::MatchResult res = hctb::match_ecs(rct->ds, pool->ds, ratio);
    ordered_json out;
    out["command"] = "match";
    out["version"] = HCTB_VERSION_STRING;
    out["ratio"] = ratio;
    out["n_rct"] = res.combined.n_rct();
    out["n_selected"] = static_cast<int>(res.selected_pool_ids.size());
    out["selected_pool_ids"] = res.selected_pool_ids;
    ordered_json balance = ordered_json::array();
    for (const auto& b : res.balance) {
      ordered_json row;
      row["covariate"] = b.covariate;
      row["smd_pre"] = b.smd_pre;
      row["smd_post"] = b.smd_post;
      balance.push_back(std::move(row));
    }
    out["balance"] = std::move(balance);
    out["combined_csv"] = hctb::to_csv(res.combined);
    out["warnings"] = res.warnings;
    *result_json = dup_string(out.dump());
  });
}

}  // extern "C"
