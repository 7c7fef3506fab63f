#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hctb/hctb.h"

using nlohmann::ordered_json;

namespace {

const char* status_name(hctb_status s) {
  switch (s) {
    case HCTB_OK:
      return "ok";
    case HCTB_INVALID_ARGUMENT:
      return "invalid_argument";
    case HCTB_IO:
      return "io";
    case HCTB_PARSE:
      return "parse";
    case HCTB_VALIDATION:
      return "validation";
    case HCTB_NUMERIC:
      return "numeric";
    case HCTB_INTERNAL:
      return "internal";
  }
  return "internal";
}

[[noreturn]] void die(hctb_status st, const std::string& message) {
  ordered_json rec;
  rec["error"]["status"] = static_cast<int>(st);
  rec["error"]["name"] = status_name(st);
  rec["error"]["message"] = message;
  std::cerr << rec.dump() << "\n";
  std::exit(static_cast<int>(st));
}

void check(hctb_status st) {
  if (st != HCTB_OK) die(st, hctb_last_error());
}

// Takes ownership of a string returned by the library.
std::string take_string(char* s) {
  std::string out = s ? s : "";
  hctb_string_free(s);
  return out;
}

double now_s() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) die(HCTB_IO, "cannot open '" + path + "' for writing");
  out << content;
  if (!out) die(HCTB_IO, "write failed for '" + path + "'");
}

// Result files are deterministic; wall clock lives only here.
void write_manifest(const std::string& out_path, const std::string& command,
                    const ordered_json& config, std::uint64_t seed,
                    const ordered_json& runtime_s,
                    const ordered_json& warnings) {
  ordered_json m;
  m["command"] = command;
  m["version"] = hctb_version();
  m["seed"] = seed;
  m["config"] = config;
  m["runtime_s"] = runtime_s;
  m["warnings"] = warnings;
  write_file(out_path + ".manifest.json", m.dump(2) + "\n");
}

void emit(const std::string& out_path, const std::string& content,
          const std::string& command, const ordered_json& config,
          std::uint64_t seed, const ordered_json& runtime_s,
          const ordered_json& warnings) {
  if (out_path.empty()) {
    std::cout << content;
    return;
  }
  write_file(out_path, content);
  write_manifest(out_path, command, config, seed, runtime_s, warnings);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::vector<double> parse_double_list(const std::string& s, const char* flag) {
  std::vector<double> out;
  for (const auto& tok : split_list(s)) {
    try {
      std::size_t used = 0;
      const double v = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      die(HCTB_INVALID_ARGUMENT,
          std::string(flag) + ": cannot parse '" + tok + "' as a number");
    }
  }
  if (out.empty())
    die(HCTB_INVALID_ARGUMENT, std::string(flag) + ": empty list");
  return out;
}

// Cells are re-dumped from the parsed result so CSV and JSON agree byte for
// byte on every number.
std::string csv_cell(const ordered_json& v) {
  if (v.is_null()) return "";
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

std::string analyze_csv(const ordered_json& result) {
  std::string out =
      "method,estimand,point,se,ci_low,ci_high,p_asym,frt_p,n_ec,ess_ec\n";
  for (const auto& r : result.at("rows")) {
    out += csv_cell(r.at("method")) + "," + csv_cell(r.at("estimand")) + "," +
           csv_cell(r.at("point")) + "," + csv_cell(r.at("se")) + "," +
           csv_cell(r.at("ci_low")) + "," + csv_cell(r.at("ci_high")) + "," +
           csv_cell(r.at("p_asym")) + "," + csv_cell(r.at("frt_p")) + "," +
           csv_cell(r.at("n_ec")) + "," + csv_cell(r.at("ess_ec")) + "\n";
  }
  return out;
}

std::string metric_rows_csv(const ordered_json& rows) {
  std::string out = "scenario,method,estimand,metric,value,mc_se\n";
  for (const auto& r : rows) {
    out += csv_cell(r.at("scenario")) + "," + csv_cell(r.at("method")) + "," +
           csv_cell(r.at("estimand")) + "," + csv_cell(r.at("metric")) + "," +
           csv_cell(r.at("value")) + "," + csv_cell(r.at("mc_se")) + "\n";
  }
  return out;
}

std::string frt_csv(const ordered_json& result) {
  std::string out =
      "method,estimand,exact,reps,p,observed_stat,failures,approximate\n";
  out += csv_cell(result.at("method")) + "," + csv_cell(result.at("estimand")) +
         "," + csv_cell(result.at("exact")) + "," + csv_cell(result.at("reps")) +
         "," + csv_cell(result.at("p")) + "," +
         csv_cell(result.at("observed_stat")) + "," +
         csv_cell(result.at("failures")) + "," +
         csv_cell(result.at("approximate")) + "\n";
  return out;
}

std::string balance_csv(const ordered_json& balance) {
  std::string out = "covariate,smd_pre,smd_post\n";
  for (const auto& r : balance) {
    out += csv_cell(r.at("covariate")) + "," + csv_cell(r.at("smd_pre")) + "," +
           csv_cell(r.at("smd_post")) + "\n";
  }
  return out;
}

struct DatasetHandle {
  hctb_dataset* ds = nullptr;
  ~DatasetHandle() { hctb_dataset_free(ds); }
};

struct GlobalOpts {
  std::uint64_t seed = 0;
  int threads = 0;  // 0: HCTB_THREADS, then hardware
  std::string out;
  std::string format = "json";
};

struct MethodFlags {
  std::string methods = "all";
  std::string estimand = "rd";
  double alpha = 0.05;
  double gamma = 0.5;
  bool adaptive = false;
  int folds = 10;
  int adaptive_bootstrap = 200;
  bool fit_propensity = false;
  bool allow_degenerate = false;
  std::string r_model = "plugin";

  void attach(CLI::App* cmd, bool with_methods = true) {
    if (with_methods)
      cmd->add_option("--methods", methods,
                      "Comma-separated method slugs, or 'all'");
    cmd->add_option("--estimand", estimand, "Comma-separated from rd,rr,or");
    cmd->add_option("--alpha", alpha, "Two-sided level");
    cmd->add_option("--gamma", gamma, "CSB selection threshold");
    cmd->add_flag("--adaptive", adaptive, "Bootstrap-MSE gamma selection");
    cmd->add_option("--folds", folds, "Conformal folds (1 = single split)");
    cmd->add_option("--adaptive-bootstrap", adaptive_bootstrap,
                    "Bootstrap replicates for adaptive gamma");
    cmd->add_flag("--fit-propensity", fit_propensity,
                  "Fit e(x) instead of the known randomization probability");
    cmd->add_flag("--allow-degenerate", allow_degenerate,
                  "Accept constant-outcome fits (clipped intercept) instead "
                  "of erroring");
    cmd->add_option("--r-model", r_model, "EC outcome-shift model")
        ->check(CLI::IsMember({"plugin", "one"}));
  }

  void fill(ordered_json& cfg, const GlobalOpts& g) const {
    cfg["methods"] = split_list(methods);
    cfg["estimands"] = split_list(estimand);
    cfg["alpha"] = alpha;
    cfg["gamma"] = gamma;
    cfg["adaptive"] = adaptive;
    cfg["folds"] = folds;
    cfg["adaptive_bootstrap"] = adaptive_bootstrap;
    cfg["fit_propensity"] = fit_propensity;
    cfg["allow_degenerate"] = allow_degenerate;
    cfg["r_model"] = r_model;
    cfg["seed"] = g.seed;
    cfg["threads"] = g.threads;
  }
};

int run_analyze(const GlobalOpts& g, const std::string& data,
                const MethodFlags& mf, const std::string& se,
                int bootstrap_reps, bool with_frt, int frt_reps,
                const std::string& refit) {
  ordered_json cfg;
  mf.fill(cfg, g);
  cfg["se"] = se;
  cfg["bootstrap_reps"] = bootstrap_reps;
  cfg["with_frt"] = with_frt;
  cfg["frt_reps"] = frt_reps;
  cfg["refit"] = refit;

  DatasetHandle h;
  check(hctb_dataset_load_csv(data.c_str(), 1, &h.ds));
  const double t0 = now_s();
  char* raw = nullptr;
  check(hctb_analyze(h.ds, cfg.dump().c_str(), &raw));
  const double t1 = now_s();
  const ordered_json result = ordered_json::parse(take_string(raw));

  ordered_json echo = cfg;
  echo["data"] = data;
  const std::string content = g.format == "csv"
                                  ? analyze_csv(result)
                                  : result.dump(2) + "\n";
  emit(g.out, content, "analyze", echo, g.seed,
       ordered_json{{"analyze", t1 - t0}}, result.at("warnings"));
  return 0;
}

int run_frt(const GlobalOpts& g, const std::string& data,
            const MethodFlags& mf, int reps, const std::string& refit,
            bool exact) {
  ordered_json cfg;
  cfg["method"] = mf.methods;
  cfg["estimand"] = mf.estimand;
  cfg["reps"] = reps;
  cfg["refit"] = refit;
  cfg["exact"] = exact;
  cfg["gamma"] = mf.gamma;
  cfg["adaptive"] = mf.adaptive;
  cfg["folds"] = mf.folds;
  cfg["adaptive_bootstrap"] = mf.adaptive_bootstrap;
  cfg["fit_propensity"] = mf.fit_propensity;
  cfg["allow_degenerate"] = mf.allow_degenerate;
  cfg["r_model"] = mf.r_model;
  cfg["seed"] = g.seed;
  cfg["threads"] = g.threads;

  DatasetHandle h;
  check(hctb_dataset_load_csv(data.c_str(), 1, &h.ds));
  const double t0 = now_s();
  char* raw = nullptr;
  check(hctb_frt(h.ds, cfg.dump().c_str(), &raw));
  const double t1 = now_s();
  const ordered_json result = ordered_json::parse(take_string(raw));

  ordered_json echo = cfg;
  echo["data"] = data;
  const std::string content =
      g.format == "csv" ? frt_csv(result) : result.dump(2) + "\n";
  emit(g.out, content, "frt", echo, g.seed, ordered_json{{"frt", t1 - t0}},
       ordered_json::array());
  return 0;
}

struct ScenarioFlag {
  const char* name;
  bool sm_correct;
  bool om_correct;
};

constexpr ScenarioFlag kScenarios[] = {
    {"correct", true, true},
    {"om-wrong", true, false},
    {"sm-wrong", false, true},
    {"sm-wrong-om-wrong", false, false},
};

int run_simulate(const GlobalOpts& g, const std::string& scenario,
                 const std::string& bias, const MethodFlags& mf, int reps,
                 int frt_reps, double rho, bool null_hypothesis, int n_r,
                 int n1, int n0, int n_e, double target_p0, double target_p1) {
  std::vector<ScenarioFlag> picked;
  for (const auto& s : kScenarios)
    if (scenario == "all" || scenario == s.name) picked.push_back(s);
  if (picked.empty())
    die(HCTB_INVALID_ARGUMENT,
        "--scenario: expected one of correct, om-wrong, sm-wrong, "
        "sm-wrong-om-wrong, all");
  const std::vector<double> biases = parse_double_list(bias, "--bias");

  ordered_json base;
  mf.fill(base, g);
  base["reps"] = reps;
  base["frt_reps"] = frt_reps;
  base["with_frt"] = frt_reps > 0;
  base["rho"] = rho;
  base["null_hypothesis"] = null_hypothesis;
  base["n_r"] = n_r;
  base["n1"] = n1;
  base["n0"] = n0;
  base["n_e"] = n_e;
  base["target_p0"] = target_p0;
  base["target_p1"] = target_p1;

  ordered_json runs = ordered_json::array();
  ordered_json all_rows = ordered_json::array();
  ordered_json runtime;
  ordered_json warnings = ordered_json::array();
  const double t_start = now_s();
  for (const auto& sc : picked) {
    for (double b : biases) {
      ordered_json cfg = base;
      cfg["sm_correct"] = sc.sm_correct;
      cfg["om_correct"] = sc.om_correct;
      cfg["b"] = b;
      const double t0 = now_s();
      char* raw = nullptr;
      check(hctb_simulate(cfg.dump().c_str(), &raw));
      const double t1 = now_s();
      ordered_json result = ordered_json::parse(take_string(raw));
      runtime[result.at("scenario").get<std::string>()] = t1 - t0;
      for (const auto& cell : result.at("cells")) {
        const int failures = cell.at("failures").get<int>();
        if (failures > 0)
          warnings.push_back(result.at("scenario").get<std::string>() + ": " +
                             cell.at("method").get<std::string>() + " " +
                             cell.at("estimand").get<std::string>() + " had " +
                             std::to_string(failures) +
                             " failed replicates");
      }
      for (auto& row : result.at("rows")) all_rows.push_back(row);
      runs.push_back(std::move(result));
    }
  }
  runtime["total"] = now_s() - t_start;

  ordered_json echo = base;
  echo["scenario"] = scenario;
  echo["bias"] = biases;

  std::string content;
  if (g.format == "csv") {
    content = metric_rows_csv(all_rows);
  } else {
    ordered_json out;
    out["command"] = "simulate";
    out["version"] = hctb_version();
    out["seed"] = g.seed;
    out["runs"] = std::move(runs);
    content = out.dump(2) + "\n";
  }
  emit(g.out, content, "simulate", echo, g.seed, runtime, warnings);
  return 0;
}

int run_match(const GlobalOpts& g, const std::string& data,
              const std::string& pool, int ratio) {
  ordered_json cfg;
  cfg["ratio"] = ratio;

  DatasetHandle rct, ec;
  check(hctb_dataset_load_csv(data.c_str(), 1, &rct.ds));
  // Pool files carry no trial shape; skip those invariants on ingest.
  check(hctb_dataset_load_csv(pool.c_str(), 0, &ec.ds));
  const double t0 = now_s();
  char* raw = nullptr;
  check(hctb_match(rct.ds, ec.ds, cfg.dump().c_str(), &raw));
  const double t1 = now_s();
  const ordered_json result = ordered_json::parse(take_string(raw));

  ordered_json echo = cfg;
  echo["data"] = data;
  echo["pool"] = pool;
  const ordered_json runtime{{"match", t1 - t0}};
  if (g.format == "csv") {
    emit(g.out, result.at("combined_csv").get<std::string>(), "match", echo,
         g.seed, runtime, result.at("warnings"));
    if (!g.out.empty())
      write_file(g.out + ".balance.csv", balance_csv(result.at("balance")));
  } else {
    emit(g.out, result.dump(2) + "\n", "match", echo, g.seed, runtime,
         result.at("warnings"));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid controlled trials with binary outcomes: doubly robust "
               "borrowing, conformal selective borrowing, randomization tests"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOpts g;
  app.add_option("--seed", g.seed, "RNG seed (end-to-end reproducibility)");
  app.add_option("--threads", g.threads,
                 "Worker threads; 0 uses HCTB_THREADS, then hardware");
  app.add_option("--out", g.out, "Output path (default stdout)");
  app.add_option("--format", g.format, "Output format")
      ->check(CLI::IsMember({"json", "csv"}));

  auto* analyze = app.add_subcommand("analyze", "Estimate effects on a CSV");
  std::string an_data;
  MethodFlags an_mf;
  std::string an_se = "eif";
  int an_bootstrap_reps = 1000;
  bool an_with_frt = false;
  int an_frt_reps = 2000;
  std::string an_refit = "full";
  analyze->add_option("--data", an_data, "Trial CSV (y,a,s,covariates)")
      ->required();
  an_mf.attach(analyze);
  analyze->add_option("--se", an_se, "Standard error mode")
      ->check(CLI::IsMember({"eif", "bootstrap"}));
  analyze->add_option("--bootstrap-reps", an_bootstrap_reps,
                      "Stratified bootstrap replicates");
  analyze->add_flag("--with-frt", an_with_frt, "Append FRT p-values");
  analyze->add_option("--frt-reps", an_frt_reps, "FRT permutations");
  analyze->add_option("--refit", an_refit, "FRT refit mode")
      ->check(CLI::IsMember({"full", "fixed-gamma"}));

  auto* frt = app.add_subcommand("frt", "Fisher randomization test");
  std::string frt_data, frt_method = "no-borrow-covadj";
  MethodFlags frt_mf;
  int frt_reps = 2000;
  std::string frt_refit = "full";
  bool frt_exact = false;
  frt->add_option("--data", frt_data, "Trial CSV")->required();
  frt->add_option("--method", frt_method, "Statistic method slug");
  frt_mf.attach(frt, /*with_methods=*/false);
  frt->add_option("--reps", frt_reps, "Permutations");
  frt->add_option("--refit", frt_refit, "Refit mode")
      ->check(CLI::IsMember({"full", "fixed-gamma"}));
  frt->add_flag("--exact", frt_exact, "Enumerate all assignments");

  auto* simulate = app.add_subcommand("simulate", "Scenario metrics");
  std::string sim_scenario = "correct", sim_bias = "0";
  MethodFlags sim_mf;
  int sim_reps = 1000, sim_frt_reps = 2000;
  double sim_rho = 0.5;
  bool sim_null = false;
  int sim_n_r = 75, sim_n1 = 50, sim_n0 = 25, sim_n_e = 150;
  double sim_p0 = 0.3, sim_p1 = 0.4;
  simulate->add_option("--scenario", sim_scenario,
                       "correct, om-wrong, sm-wrong, sm-wrong-om-wrong, all");
  simulate->add_option("--bias", sim_bias, "Comma-separated bias magnitudes");
  sim_mf.attach(simulate);
  simulate->add_option("--reps", sim_reps, "Replicates per scenario");
  simulate->add_option("--frt-reps", sim_frt_reps,
                       "FRT permutations per replicate (0 disables)");
  simulate->add_option("--rho", sim_rho, "Biased fraction of the EC pool");
  simulate->add_flag("--null", sim_null, "Impose the null (theta1 = theta0)");
  simulate->add_option("--n-r", sim_n_r, "RCT size");
  simulate->add_option("--n1", sim_n1, "Treated arm size");
  simulate->add_option("--n0", sim_n0, "Control arm size");
  simulate->add_option("--n-e", sim_n_e, "External-control pool size");
  simulate->add_option("--target-p0", sim_p0, "Marginal P(Y(0)=1)");
  simulate->add_option("--target-p1", sim_p1, "Marginal P(Y(1)=1)");

  auto* match = app.add_subcommand("match", "Nearest-neighbor EC selection");
  std::string match_data, match_pool;
  int match_ratio = 1;
  match->add_option("--data", match_data, "RCT CSV")->required();
  match->add_option("--pool", match_pool, "EC pool CSV")->required();
  match->add_option("--ratio", match_ratio, "ECs per RCT unit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    die(HCTB_INVALID_ARGUMENT, e.what());
  }

  if (analyze->parsed())
    return run_analyze(g, an_data, an_mf, an_se, an_bootstrap_reps,
                       an_with_frt, an_frt_reps, an_refit);
  if (frt->parsed()) {
    MethodFlags mf = frt_mf;
    mf.methods = frt_method;
    return run_frt(g, frt_data, mf, frt_reps, frt_refit, frt_exact);
  }
  if (simulate->parsed())
    return run_simulate(g, sim_scenario, sim_bias, sim_mf, sim_reps,
                        sim_frt_reps, sim_rho, sim_null, sim_n_r, sim_n1,
                        sim_n0, sim_n_e, sim_p0, sim_p1);
  if (match->parsed()) return run_match(g, match_data, match_pool, match_ratio);
  die(HCTB_INVALID_ARGUMENT, "no subcommand given");
}
