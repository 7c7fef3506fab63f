#include "conformal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "error.hpp"
#include "logistic.hpp"
#include "rng.hpp"
#include "threading.hpp"

namespace hctb {

namespace {

constexpr std::uint64_t kFoldStream = 0xf01d;
constexpr std::uint64_t kAdaptiveStream = 0xada9;
constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

std::vector<double> default_gamma_grid() {
  std::vector<double> g(21);
  for (int i = 0; i <= 20; ++i) g[i] = i / 20.0;
  return g;
}

const char* score_name(ConformalConfig::Score s) {
  switch (s) {
    case ConformalConfig::Score::nn:
      return "nn";
    case ConformalConfig::Score::lcnn:
      return "lcnn";
    case ConformalConfig::Score::sar:
      return "sar";
  }
  return "nn";
}

ConformalConfig::Score parse_score(const std::string& name) {
  if (name == "nn") return ConformalConfig::Score::nn;
  if (name == "lcnn") return ConformalConfig::Score::lcnn;
  if (name == "sar") return ConformalConfig::Score::sar;
  fail(Status::invalid_argument, "unknown conformal score: " + name);
}

double conformal_score_nn(const Eigen::RowVectorXd& xj, int yj,
                          const Eigen::MatrixXd& x_ref,
                          const Eigen::VectorXi& y_ref) {
  double best = kInf;
  for (int k = 0; k < x_ref.rows(); ++k) {
    if (y_ref[k] != yj) continue;
    best = std::min(best, (x_ref.row(k) - xj).squaredNorm());
  }
  return best == kInf ? kInf : std::sqrt(best);
}

double conformal_score_sar(int yj, double mhat) {
  double var = std::max(mhat * (1.0 - mhat), 1e-6);
  return std::abs(yj - mhat) / std::sqrt(var);
}

double conformal_p_count(const std::vector<double>& calib, double sj) {
  int c = 0;
  for (double s : calib)
    if (s > sj) ++c;
  return (c + 1.0) / (calib.size() + 1.0);
}

ConformalPvalues conformal_pvalues(const TrialDataset& ds,
                                   const ConformalConfig& cfg) {
  if (cfg.folds < 1)
    fail(Status::invalid_argument, "conformal folds must be >= 1");
  std::vector<int> ctrl, ec;
  for (int i = 0; i < ds.n(); ++i) {
    if (ds.s[i] == 1 && ds.a[i] == 0) ctrl.push_back(i);
    if (ds.s[i] == 0) ec.push_back(i);
  }
  const int n0 = static_cast<int>(ctrl.size());
  if (cfg.folds > 1 && n0 < cfg.folds)
    fail(Status::invalid_argument, "fewer RCT controls than conformal folds");
  if (n0 < 2)
    fail(Status::invalid_argument, "conformal needs at least 2 RCT controls");

  ConformalPvalues out;
  out.ec_ids = ec;
  out.score = cfg.score;
  out.p = Eigen::VectorXd::Zero(ec.size());
  if (ec.empty()) return out;
  const int n_ec = static_cast<int>(ec.size());

  // Distances are taken in coordinates standardized over the units that
  // participate: RCT controls plus ECs.
  Eigen::MatrixXd sub(n0 + n_ec, ds.p());
  for (int k = 0; k < n0; ++k) sub.row(k) = ds.x.row(ctrl[k]);
  for (int j = 0; j < n_ec; ++j) sub.row(n0 + j) = ds.x.row(ec[j]);
  Eigen::MatrixXd z = standardize(sub);

  std::vector<int> shuffled(ctrl.size());
  for (int k = 0; k < n0; ++k) shuffled[k] = k;  // positions into ctrl/z
  Rng rng = Rng::stream(cfg.seed, kFoldStream);
  rng.shuffle(shuffled);

  // Fold k holds the calibration positions; single-split mode trains on the
  // first half and calibrates on the rest.
  std::vector<std::vector<int>> fold_calib;
  if (cfg.folds == 1) {
    int n_train = (n0 + 1) / 2;
    fold_calib.emplace_back(shuffled.begin() + n_train, shuffled.end());
  } else {
    int base = n0 / cfg.folds, extra = n0 % cfg.folds, at = 0;
    for (int k = 0; k < cfg.folds; ++k) {
      int len = base + (k < extra ? 1 : 0);
      fold_calib.emplace_back(shuffled.begin() + at, shuffled.begin() + at + len);
      at += len;
    }
  }

  const int n_folds = static_cast<int>(fold_calib.size());
  for (const auto& calib : fold_calib) {
    std::vector<char> in_calib(n0, 0);
    for (int pos : calib) in_calib[pos] = 1;
    std::vector<int> train;
    for (int k = 0; k < n0; ++k)
      if (!in_calib[k]) train.push_back(k);

    // Scores for the held-out controls and for every EC against the training
    // portion only.
    std::vector<double> s_cal(calib.size());
    std::vector<double> s_ec(n_ec);
    if (cfg.score == ConformalConfig::Score::sar) {
      Eigen::MatrixXd xt(train.size(), ds.p());
      Eigen::VectorXd yt(train.size());
      for (size_t k = 0; k < train.size(); ++k) {
        xt.row(k) = ds.x.row(ctrl[train[k]]);
        yt[k] = ds.y[ctrl[train[k]]];
      }
      LogisticOptions lo;
      lo.allow_degenerate = true;  // tiny training folds may be constant
      LogisticFit fit = fit_logistic(xt, yt, nullptr, lo);
      for (size_t k = 0; k < calib.size(); ++k) {
        int id = ctrl[calib[k]];
        double m = predict_prob(fit, ds.x.row(id))[0];
        s_cal[k] = conformal_score_sar(ds.y[id], m);
      }
      for (int j = 0; j < n_ec; ++j) {
        double m = predict_prob(fit, ds.x.row(ec[j]))[0];
        s_ec[j] = conformal_score_sar(ds.y[ec[j]], m);
      }
    } else {
      Eigen::MatrixXd zt(train.size(), ds.p());
      Eigen::VectorXi yt(train.size());
      for (size_t k = 0; k < train.size(); ++k) {
        zt.row(k) = z.row(train[k]);
        yt[k] = ds.y[ctrl[train[k]]];
      }
      for (size_t k = 0; k < calib.size(); ++k)
        s_cal[k] =
            conformal_score_nn(z.row(calib[k]), ds.y[ctrl[calib[k]]], zt, yt);
      for (int j = 0; j < n_ec; ++j)
        s_ec[j] = conformal_score_nn(z.row(n0 + j), ds.y[ec[j]], zt, yt);
    }

    if (cfg.score == ConformalConfig::Score::lcnn) {
      std::vector<double> by_y[2];
      for (size_t k = 0; k < calib.size(); ++k)
        by_y[ds.y[ctrl[calib[k]]]].push_back(s_cal[k]);
      for (int j = 0; j < n_ec; ++j) {
        const auto& cal_y = by_y[ds.y[ec[j]]];
        if (cal_y.empty()) out.lcnn_empty_fold = true;
        out.p[j] += conformal_p_count(cal_y, s_ec[j]);
      }
    } else {
      for (int j = 0; j < n_ec; ++j)
        out.p[j] += conformal_p_count(s_cal, s_ec[j]);
    }
  }
  out.p /= n_folds;
  return out;
}

SelectionResult select(const ConformalPvalues& pv, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0))
    fail(Status::invalid_argument, "gamma must be in [0,1]");
  SelectionResult r;
  r.ec_ids = pv.ec_ids;
  r.p_values = pv.p;
  r.gamma = gamma;
  r.score = pv.score;
  r.lcnn_empty_fold = pv.lcnn_empty_fold;
  for (size_t j = 0; j < pv.ec_ids.size(); ++j)
    if (pv.p[j] > gamma) r.selected.push_back(pv.ec_ids[j]);
  return r;
}

EffectEstimate csb_estimate(const TrialDataset& ds, const SelectionResult& sel,
                            Estimand estimand, const NuisanceConfig& ncfg,
                            double alpha) {
  std::vector<int> ds_ecs;
  for (int i = 0; i < ds.n(); ++i)
    if (ds.s[i] == 0) ds_ecs.push_back(i);
  if (sel.ec_ids != ds_ecs)
    fail(Status::invalid_argument, "selection does not match dataset ECs");

  EffectEstimate est;
  if (sel.selected.empty()) {
    NuisanceBundle nb = fit_bundle(ds, {}, ncfg);
    est = asymptotic_inference(ds, theta_covadj(ds, nb, 1),
                               theta_covadj(ds, nb, 0), estimand, alpha);
  } else {
    NuisanceBundle nb = fit_bundle(ds, sel.selected, ncfg);
    est = asymptotic_inference(ds, theta_covadj(ds, nb, 1),
                               theta0_aipw(ds, nb, sel.selected), estimand,
                               alpha);
  }
  est.method = std::string("csb-") + score_name(sel.score);
  return est;
}

namespace {

TrialDataset resample_stratified(const TrialDataset& ds, Rng& rng,
                                 const std::vector<int>& treated,
                                 const std::vector<int>& control,
                                 const std::vector<int>& ec) {
  std::vector<int> rows;
  rows.reserve(ds.n());
  for (const auto* cell : {&treated, &control, &ec})
    for (size_t k = 0; k < cell->size(); ++k)
      rows.push_back((*cell)[rng.uniform_int(cell->size())]);
  Eigen::MatrixXd x(rows.size(), ds.p());
  Eigen::VectorXi y(rows.size()), a(rows.size()), s(rows.size());
  for (size_t k = 0; k < rows.size(); ++k) {
    x.row(k) = ds.x.row(rows[k]);
    y[k] = ds.y[rows[k]];
    a[k] = ds.a[rows[k]];
    s[k] = ds.s[rows[k]];
  }
  return from_arrays(x, y, a, s, ds.covariate_names);
}

double cached_csb_rd(const TrialDataset& ds, const SelectionResult& sel,
                     const NuisanceConfig& ncfg,
                     std::map<std::vector<int>, double>& cache) {
  auto it = cache.find(sel.selected);
  if (it != cache.end()) return it->second;
  double t = csb_estimate(ds, sel, Estimand::rd, ncfg).point;
  cache.emplace(sel.selected, t);
  return t;
}

}  // namespace

AdaptiveResult adaptive_gamma(const TrialDataset& ds, const ConformalConfig& cfg,
                              const NuisanceConfig& ncfg, int threads) {
  const auto& grid = cfg.gamma_grid;
  if (grid.empty()) fail(Status::invalid_argument, "empty gamma grid");
  for (size_t g = 0; g < grid.size(); ++g) {
    if (!(grid[g] >= 0.0 && grid[g] <= 1.0))
      fail(Status::invalid_argument, "gamma grid values must lie in [0,1]");
    if (g > 0 && grid[g] <= grid[g - 1])
      fail(Status::invalid_argument, "gamma grid must be strictly increasing");
  }
  const int G = static_cast<int>(grid.size());
  const int B = cfg.bootstrap_reps;
  if (B < 2) fail(Status::invalid_argument, "bootstrap_reps must be >= 2");

  // The threshold is a selection device: every internal refit tolerates
  // degenerate resampled outcomes.
  NuisanceConfig nloose = ncfg;
  nloose.allow_degenerate = true;

  AdaptiveResult out;
  out.gamma_grid = grid;
  out.tau.resize(G);
  out.mse.assign(G, 0.0);

  ConformalPvalues pv = conformal_pvalues(ds, cfg);
  std::map<std::vector<int>, double> cache;
  for (int g = 0; g < G; ++g)
    out.tau[g] = cached_csb_rd(ds, select(pv, grid[g]), nloose, cache);
  out.tau_noborrow = cached_csb_rd(ds, select(pv, 1.0), nloose, cache);

  std::vector<int> treated, control, ec;
  for (int i = 0; i < ds.n(); ++i) {
    if (ds.s[i] == 1)
      (ds.a[i] == 1 ? treated : control).push_back(i);
    else
      ec.push_back(i);
  }

  Rng master = Rng::stream(cfg.seed, kAdaptiveStream);
  std::vector<std::uint64_t> rep_seed(B);
  for (int b = 0; b < B; ++b) rep_seed[b] = master.next_u64();

  std::vector<std::vector<double>> boot_tau(B, std::vector<double>(G));
  std::vector<double> boot_tau1(B);
  std::vector<std::string> rep_err(B);

  ThreadPool pool(resolve_threads(threads));
  pool.parallel_for(static_cast<std::size_t>(B), [&](std::size_t b) {
    try {
      Rng rng(rep_seed[b]);
      TrialDataset db = resample_stratified(ds, rng, treated, control, ec);
      ConformalConfig cb = cfg;
      cb.seed = rng.next_u64();
      ConformalPvalues pvb = conformal_pvalues(db, cb);
      std::map<std::vector<int>, double> cache_b;
      for (int g = 0; g < G; ++g)
        boot_tau[b][g] = cached_csb_rd(db, select(pvb, grid[g]), nloose, cache_b);
      boot_tau1[b] = cached_csb_rd(db, select(pvb, 1.0), nloose, cache_b);
    } catch (const std::exception& e) {
      rep_err[b] = e.what();
    }
  });
  for (int b = 0; b < B; ++b)
    if (!rep_err[b].empty())
      fail(Status::numeric, "adaptive bootstrap replicate failed: " + rep_err[b]);

  for (int g = 0; g < G; ++g) {
    double mean_t = 0, mean_d = 0;
    for (int b = 0; b < B; ++b) {
      mean_t += boot_tau[b][g];
      mean_d += boot_tau[b][g] - boot_tau1[b];
    }
    mean_t /= B;
    mean_d /= B;
    double var_t = 0, var_d = 0;
    for (int b = 0; b < B; ++b) {
      double dt = boot_tau[b][g] - mean_t;
      double dd = boot_tau[b][g] - boot_tau1[b] - mean_d;
      var_t += dt * dt;
      var_d += dd * dd;
    }
    var_t /= B - 1;
    var_d /= B - 1;
    double bias = out.tau[g] - out.tau_noborrow;
    out.mse[g] = bias * bias - var_d + var_t;
  }

  int best = 0;
  for (int g = 1; g < G; ++g)
    if (out.mse[g] <= out.mse[best]) best = g;  // ties: borrow less
  out.gamma_hat = grid[best];
  return out;
}

}  // namespace hctb
