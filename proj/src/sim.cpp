#include "sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "error.hpp"
#include "threading.hpp"

namespace hctb {
namespace {

// Calibration must not move when config.seed does, so it runs on its own
// fixed seed; the three intercepts and the truth integral draw sequential
// blocks from one stream.
constexpr std::uint64_t kCalibrationSeed = 0x5eedca1bULL;
constexpr std::uint64_t kBiasSelectStream = 0xb1a5ULL;
// Replicate streams sit in disjoint high ranges so a replicate index can
// never alias another stream family under the same master seed.
constexpr std::uint64_t kRepStreamBase = 0x200000000ULL;
constexpr std::uint64_t kConformalStreamBase = 0x300000000ULL;
constexpr std::uint64_t kFrtStreamBase = 0x400000000ULL;

constexpr int kCalibrationDraws = 100000;
constexpr double kIntervalTol = 1e-7;
constexpr double kTargetTol = 1e-4;

// The paper's convention: probability = {1 + exp(z)}^-1, decreasing in z.
double paper_prob(double z) { return 1.0 / (1.0 + std::exp(z)); }

Eigen::MatrixXd draw_uniform_sample(Rng& rng, int rows, int cols) {
  Eigen::MatrixXd x(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) x(i, j) = rng.uniform(-2.0, 2.0);
  return x;
}

ScenarioConfig validated(const ScenarioConfig& cfg) {
  ScenarioConfig out = cfg;
  if (out.p < 1) fail(Status::invalid_argument, "scenario: p must be positive");
  if (out.n1 < 1 || out.n0 < 1)
    fail(Status::invalid_argument, "scenario: both RCT arms must be non-empty");
  if (out.n1 + out.n0 != out.n_r)
    fail(Status::invalid_argument, "scenario: n1 + n0 must equal n_r");
  if (out.n_e < 0) fail(Status::invalid_argument, "scenario: n_e must be >= 0");
  if (!(out.rho >= 0.0 && out.rho <= 1.0))
    fail(Status::invalid_argument, "scenario: rho must lie in [0,1]");
  if (!(out.b >= 0.0)) fail(Status::invalid_argument, "scenario: b must be >= 0");
  if (!(out.target_p0 > 0.0 && out.target_p0 < 1.0) ||
      !(out.target_p1 > 0.0 && out.target_p1 < 1.0))
    fail(Status::invalid_argument, "scenario: targets must lie in (0,1)");
  auto fill = [&](Eigen::VectorXd& v, double value, const char* name) {
    if (v.size() == 0) v = Eigen::VectorXd::Constant(out.p, value);
    if (v.size() != out.p)
      fail(Status::invalid_argument,
           std::string("scenario: ") + name + " must have length p");
  };
  fill(out.eta, 2.0, "eta");
  fill(out.beta0, 1.0, "beta0");
  fill(out.beta1, 2.0, "beta1");
  return out;
}

}  // namespace

Eigen::MatrixXd transform_covariates(const Eigen::MatrixXd& x) {
  return x.array().exp() + 10.0 * x.array().sin() * x.array().cos();
}

double calibrate_intercept(const Eigen::VectorXd& slopes, double target,
                           Rng& rng, bool transformed) {
  if (!(target > 0.0 && target < 1.0))
    fail(Status::invalid_argument, "calibrate_intercept: target must lie in (0,1)");
  const int p = static_cast<int>(slopes.size());
  if (p < 1) fail(Status::invalid_argument, "calibrate_intercept: empty slopes");
  Eigen::MatrixXd x = draw_uniform_sample(rng, kCalibrationDraws, p);
  if (transformed) x = transform_covariates(x);
  const Eigen::ArrayXd lin = (x * slopes).array();
  auto mean_at = [&](double c) {
    return (1.0 / (1.0 + (lin + c).exp())).mean();
  };
  // mean_at is strictly decreasing in c.
  double lo = -50.0, hi = 50.0;
  while (hi - lo > kIntervalTol) {
    const double mid = 0.5 * (lo + hi);
    if (mean_at(mid) > target)
      lo = mid;
    else
      hi = mid;
  }
  const double c = 0.5 * (lo + hi);
  if (std::abs(mean_at(c) - target) > kTargetTol)
    fail(Status::numeric, "calibrate_intercept: target unattainable in [-50,50]");
  return c;
}

ScenarioTruth calibrate_scenario(const ScenarioConfig& raw) {
  const ScenarioConfig cfg = validated(raw);
  Rng rng = Rng::stream(kCalibrationSeed, 0);
  ScenarioTruth t;
  const double target_s = static_cast<double>(cfg.n_r) / (cfg.n_r + cfg.n_e);
  t.eta0 = calibrate_intercept(cfg.eta, target_s, rng, !cfg.sm_correct);
  t.b00 = calibrate_intercept(cfg.beta0, cfg.target_p0, rng, !cfg.om_correct);
  t.b10 = calibrate_intercept(cfg.beta1, cfg.target_p1, rng, !cfg.om_correct);

  // theta_a = E{mu_a(X) pi(X)} / E{pi(X)}: the outcome mean tilted toward the
  // trial population, evaluated on one shared raw sample with each model
  // seeing the covariates its misspecification flag dictates.
  const Eigen::MatrixXd x = draw_uniform_sample(rng, kCalibrationDraws, cfg.p);
  const Eigen::MatrixXd& x_sm = cfg.sm_correct ? x : transform_covariates(x);
  const Eigen::MatrixXd& x_om = cfg.om_correct ? x : transform_covariates(x);
  const Eigen::ArrayXd pi =
      1.0 / (1.0 + ((x_sm * cfg.eta).array() + t.eta0).exp());
  const Eigen::ArrayXd mu0 =
      1.0 / (1.0 + ((x_om * cfg.beta0).array() + t.b00).exp());
  const Eigen::ArrayXd mu1 =
      1.0 / (1.0 + ((x_om * cfg.beta1).array() + t.b10).exp());
  const double denom = pi.sum();
  t.theta0 = (mu0 * pi).sum() / denom;
  t.theta1 = cfg.null_hypothesis ? t.theta0 : (mu1 * pi).sum() / denom;
  t.tau_rd = plug_in(t.theta1, t.theta0, Estimand::rd);
  t.tau_rr = plug_in(t.theta1, t.theta0, Estimand::rr);
  t.tau_or = plug_in(t.theta1, t.theta0, Estimand::odds);
  return t;
}

GeneratedTrial generate_dataset(const ScenarioConfig& raw,
                                const ScenarioTruth& truth, Rng& rng) {
  const ScenarioConfig cfg = validated(raw);
  const int n = cfg.n_r + cfg.n_e;
  Eigen::MatrixXd x(n, cfg.p);
  // Rejection to quota: candidates always consume p uniforms plus one
  // Bernoulli draw, kept or not, so the draw sequence is reproducible.
  int got_rct = 0, got_ec = 0;
  const long budget = 1000L * std::max(n, 1);
  Eigen::VectorXd cand(cfg.p);
  Eigen::VectorXd cand_sm(cfg.p);
  for (long attempts = 0; got_rct < cfg.n_r || got_ec < cfg.n_e; ++attempts) {
    if (attempts >= budget)
      fail(Status::numeric,
           "generate_dataset: candidate budget exhausted; sampling model "
           "leaves a quota unreachable");
    for (int j = 0; j < cfg.p; ++j) cand[j] = rng.uniform(-2.0, 2.0);
    if (cfg.sm_correct)
      cand_sm = cand;
    else
      cand_sm = transform_covariates(cand.transpose()).transpose();
    const bool in_trial =
        rng.bernoulli(paper_prob(truth.eta0 + cfg.eta.dot(cand_sm)));
    if (in_trial && got_rct < cfg.n_r)
      x.row(got_rct++) = cand;
    else if (!in_trial && got_ec < cfg.n_e)
      x.row(cfg.n_r + got_ec++) = cand;
  }

  Eigen::VectorXi a = Eigen::VectorXi::Zero(n);
  std::vector<int> arm(static_cast<std::size_t>(cfg.n_r), 0);
  std::fill(arm.begin(), arm.begin() + cfg.n1, 1);
  rng.shuffle(arm);
  for (int i = 0; i < cfg.n_r; ++i) a[i] = arm[static_cast<std::size_t>(i)];

  // The biased subset comes from a forked stream so the main sequence does not
  // depend on rho; at b = 0 the generated data match any rho bit for bit.
  Rng select_rng = Rng::stream(rng.next_u64(), kBiasSelectStream);
  const int n_biased =
      static_cast<int>(std::floor(cfg.rho * cfg.n_e + 1e-9));
  std::vector<char> biased(static_cast<std::size_t>(cfg.n_e), 0);
  for (std::size_t local : select_rng.sample_without_replacement(
           static_cast<std::size_t>(cfg.n_e), static_cast<std::size_t>(n_biased)))
    biased[local] = 1;

  const Eigen::MatrixXd x_om = cfg.om_correct ? x : transform_covariates(x);
  Eigen::VectorXi y(n);
  Eigen::VectorXi s(n);
  for (int i = 0; i < n; ++i) {
    const bool is_rct = i < cfg.n_r;
    s[i] = is_rct ? 1 : 0;
    double lin;
    if (is_rct && a[i] == 1 && !cfg.null_hypothesis)
      lin = truth.b10 + cfg.beta1.dot(x_om.row(i));
    else
      lin = truth.b00 + cfg.beta0.dot(x_om.row(i));
    if (!is_rct && biased[static_cast<std::size_t>(i - cfg.n_r)])
      lin -= cfg.b / 20.0;
    y[i] = rng.bernoulli(paper_prob(lin)) ? 1 : 0;
  }

  GeneratedTrial out;
  out.data = from_arrays(x, y, a, s);
  for (int local = 0; local < cfg.n_e; ++local)
    if (biased[static_cast<std::size_t>(local)])
      out.biased_ec_ids.push_back(cfg.n_r + local);
  out.truth = truth;
  return out;
}

GeneratedTrial generate_dataset(const ScenarioConfig& cfg, Rng& rng) {
  return generate_dataset(cfg, calibrate_scenario(cfg), rng);
}

namespace {

double true_value_for(const ScenarioTruth& t, Estimand e) {
  switch (e) {
    case Estimand::rd:
      return t.tau_rd;
    case Estimand::rr:
      return t.tau_rr;
    case Estimand::odds:
      return t.tau_or;
  }
  return t.tau_rd;
}

double sample_sd(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / (static_cast<double>(v.size()) - 1.0));
}

}  // namespace

ScenarioMetrics run_scenario(const ScenarioRequest& request) {
  if (request.methods.empty())
    fail(Status::invalid_argument, "run_scenario: no methods");
  if (request.estimands.empty())
    fail(Status::invalid_argument, "run_scenario: no estimands");
  if (request.reps < 1)
    fail(Status::invalid_argument, "run_scenario: reps must be >= 1");
  if (!(request.alpha > 0.0 && request.alpha < 1.0))
    fail(Status::invalid_argument, "run_scenario: alpha must lie in (0,1)");
  if (request.with_frt && request.frt_reps < 1)
    fail(Status::invalid_argument, "run_scenario: frt_reps must be >= 1");
  const auto& known = method_names();
  for (const auto& m : request.methods)
    if (std::find(known.begin(), known.end(), m) == known.end())
      fail(Status::invalid_argument, "run_scenario: unknown method: " + m);

  const ScenarioConfig cfg = validated(request.config);
  const ScenarioTruth truth = calibrate_scenario(cfg);
  const int n_methods = static_cast<int>(request.methods.size());
  const int n_est = static_cast<int>(request.estimands.size());
  const int cells = n_methods * n_est;
  const int reps = request.reps;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  // Slot-per-replicate storage, reduced sequentially afterwards so results do
  // not depend on the worker count. 2 marks "not available".
  std::vector<double> pts(static_cast<std::size_t>(cells) * reps, nan);
  std::vector<double> nsel(static_cast<std::size_t>(cells) * reps, nan);
  std::vector<unsigned char> rej(static_cast<std::size_t>(cells) * reps, 2);
  std::vector<unsigned char> frt_rej(static_cast<std::size_t>(cells) * reps, 2);

  ThreadPool pool(resolve_threads(request.threads));
  pool.parallel_for(static_cast<std::size_t>(reps), [&](std::size_t r) {
    Rng gen_rng = Rng::stream(cfg.seed, kRepStreamBase + r);
    GeneratedTrial trial;
    try {
      trial = generate_dataset(cfg, truth, gen_rng);
    } catch (const std::exception&) {
      return;  // every cell of this replicate stays failed
    }
    const std::uint64_t conformal_seed =
        Rng::stream(cfg.seed, kConformalStreamBase + r).next_u64();
    const std::uint64_t frt_seed =
        Rng::stream(cfg.seed, kFrtStreamBase + r).next_u64();
    for (int mi = 0; mi < n_methods; ++mi) {
      for (int ei = 0; ei < n_est; ++ei) {
        const std::size_t idx =
            (static_cast<std::size_t>(mi) * n_est + ei) * reps + r;
        MethodOptions opt = request.method_options;
        opt.nuisance.allow_degenerate = true;
        opt.conformal.seed = conformal_seed;
        opt.alpha = request.alpha;
        opt.threads = 1;
        try {
          const MethodFit fit = fit_method(trial.data, request.methods[mi],
                                           request.estimands[ei], opt);
          pts[idx] = fit.effect.point;
          rej[idx] = fit.effect.p_asym <= request.alpha ? 1 : 0;
          nsel[idx] = fit.effect.n_borrowed;
        } catch (const std::exception&) {
        }
        if (!request.with_frt) continue;
        FrtSpec fs;
        fs.method = request.methods[mi];
        fs.estimand = request.estimands[ei];
        fs.reps = request.frt_reps;
        fs.seed = frt_seed;
        fs.gamma = request.method_options.gamma;
        fs.adaptive = request.method_options.adaptive;
        fs.conformal = request.method_options.conformal;
        fs.nuisance = request.method_options.nuisance;
        fs.threads = 1;
        try {
          frt_rej[idx] = frt_pvalue(trial.data, fs).p <= request.alpha ? 1 : 0;
        } catch (const std::exception&) {
        }
      }
    }
  });

  ScenarioMetrics out;
  out.config = cfg;
  out.truth = truth;
  out.cells.resize(static_cast<std::size_t>(cells));

  for (int mi = 0; mi < n_methods; ++mi) {
    for (int ei = 0; ei < n_est; ++ei) {
      MetricCell& cell = out.cells[static_cast<std::size_t>(mi) * n_est + ei];
      cell.method = request.methods[mi];
      cell.estimand = request.estimands[ei];
      cell.true_value = true_value_for(truth, cell.estimand);
      const std::size_t base =
          (static_cast<std::size_t>(mi) * n_est + ei) * reps;
      std::vector<double> ok_pts, ok_sel, sq_err, sq_dev;
      int n_rej = 0, rej_avail = 0, n_frt = 0, frt_avail = 0;
      for (int r = 0; r < reps; ++r) {
        const double v = pts[base + r];
        if (std::isfinite(v)) {
          ok_pts.push_back(v);
          ok_sel.push_back(nsel[base + r]);
        }
        if (rej[base + r] != 2) {
          ++rej_avail;
          n_rej += rej[base + r];
        }
        if (frt_rej[base + r] != 2) {
          ++frt_avail;
          n_frt += frt_rej[base + r];
        }
      }
      const int used = static_cast<int>(ok_pts.size());
      cell.reps_used = used;
      cell.failures = reps - used;
      if (used > 0) {
        double mean = 0;
        for (double v : ok_pts) mean += v;
        mean /= used;
        cell.bias = mean - cell.true_value;
        double var = 0, mse = 0, mean_sel = 0;
        for (std::size_t k = 0; k < ok_pts.size(); ++k) {
          const double d = ok_pts[k] - mean;
          const double e = ok_pts[k] - cell.true_value;
          var += d * d;
          mse += e * e;
          sq_dev.push_back(d * d);
          sq_err.push_back(e * e);
          mean_sel += ok_sel[k];
        }
        // Population variance, so mse = bias^2 + variance holds exactly.
        cell.variance = var / used;
        cell.mse = mse / used;
        cell.mean_selected = mean_sel / used;
        const double sd_pts = sample_sd(ok_pts, mean);
        cell.bias_mcse = sd_pts / std::sqrt(static_cast<double>(used));
        cell.variance_mcse = sample_sd(sq_dev, cell.variance) /
                             std::sqrt(static_cast<double>(used));
        cell.mse_mcse =
            sample_sd(sq_err, cell.mse) / std::sqrt(static_cast<double>(used));
        cell.mean_selected_mcse = sample_sd(ok_sel, cell.mean_selected) /
                                  std::sqrt(static_cast<double>(used));
      } else {
        cell.bias = cell.variance = cell.mse = cell.mean_selected = nan;
        cell.bias_mcse = cell.variance_mcse = cell.mse_mcse =
            cell.mean_selected_mcse = nan;
      }
      if (rej_avail > 0) {
        cell.rejection = static_cast<double>(n_rej) / rej_avail;
        cell.rejection_mcse =
            std::sqrt(cell.rejection * (1.0 - cell.rejection) / rej_avail);
      } else {
        cell.rejection = cell.rejection_mcse = nan;
      }
      if (frt_avail > 0) {
        cell.frt_rejection = static_cast<double>(n_frt) / frt_avail;
        cell.frt_rejection_mcse = std::sqrt(
            cell.frt_rejection * (1.0 - cell.frt_rejection) / frt_avail);
      } else {
        cell.frt_rejection = cell.frt_rejection_mcse = nan;
      }
    }
  }

  // Relative MSE against the covariate-adjusted no-borrowing reference when it
  // is in the method list, else against the first method.
  int ref = 0;
  for (int mi = 0; mi < n_methods; ++mi)
    if (request.methods[static_cast<std::size_t>(mi)] == "no-borrow-covadj")
      ref = mi;
  for (int mi = 0; mi < n_methods; ++mi) {
    for (int ei = 0; ei < n_est; ++ei) {
      MetricCell& cell = out.cells[static_cast<std::size_t>(mi) * n_est + ei];
      const double ref_mse =
          out.cells[static_cast<std::size_t>(ref) * n_est + ei].mse;
      cell.rel_mse = (std::isfinite(ref_mse) && ref_mse > 0.0)
                         ? cell.mse / ref_mse
                         : nan;
    }
  }
  return out;
}

std::string scenario_label(const ScenarioConfig& cfg) {
  std::string label = "b" + format_double(cfg.b);
  label += cfg.sm_correct ? "-sm-correct" : "-sm-wrong";
  label += cfg.om_correct ? "-om-correct" : "-om-wrong";
  if (cfg.null_hypothesis) label += "-null";
  return label;
}

std::vector<MetricRow> metrics_to_rows(const ScenarioMetrics& metrics) {
  std::vector<MetricRow> rows;
  const std::string scenario = scenario_label(metrics.config);
  for (const MetricCell& cell : metrics.cells) {
    auto push = [&](const std::string& metric, double value, double mc_se) {
      rows.push_back(
          {scenario, cell.method, estimand_name(cell.estimand), metric, value, mc_se});
    };
    push("true_value", cell.true_value, 0.0);
    push("bias", cell.bias, cell.bias_mcse);
    push("variance", cell.variance, cell.variance_mcse);
    push("mse", cell.mse, cell.mse_mcse);
    push("rel_mse", cell.rel_mse, 0.0);
    push("rejection", cell.rejection, cell.rejection_mcse);
    if (std::isfinite(cell.frt_rejection))
      push("frt_rejection", cell.frt_rejection, cell.frt_rejection_mcse);
    push("mean_selected", cell.mean_selected, cell.mean_selected_mcse);
    push("failures", cell.failures, 0.0);
    push("reps_used", cell.reps_used, 0.0);
  }
  return rows;
}

}  // namespace hctb
