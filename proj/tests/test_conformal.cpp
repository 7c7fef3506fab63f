#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "conformal.hpp"
#include "doctest.h"
#include "estimators.hpp"
#include "rng.hpp"

using namespace hctb;

namespace {

double expit_d(double v) { return 1.0 / (1.0 + std::exp(-v)); }


// Hybrid draw; biased ECs (the last n_biased of them) get a logit shift on
// the control outcome law, or a hard outcome flip when flip is set.
TrialDataset draw_hybrid(Rng& rng, int n1, int n0, int n_ec,
                         const Eigen::VectorXd& b1, const Eigen::VectorXd& b0,
                         int n_biased = 0, double shift = 0.0,
                         bool flip = false) {
  const int n = n1 + n0 + n_ec;
  const int p = b1.size() - 1;
  Eigen::MatrixXd x(n, p);
  Eigen::VectorXi y(n), a(n), s(n);
  std::vector<int> arm(n1 + n0, 0);
  for (int i = 0; i < n1; ++i) arm[i] = 1;
  rng.shuffle(arm);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) x(i, j) = rng.uniform(-2, 2);
    s[i] = i < n1 + n0;
    a[i] = s[i] ? arm[i] : 0;
    const Eigen::VectorXd& beta = a[i] == 1 ? b1 : b0;
    double eta = beta[0];
    for (int j = 0; j < p; ++j) eta += beta[j + 1] * x(i, j);
    const bool biased = s[i] == 0 && i >= n - n_biased;
    if (biased && !flip) eta += shift;
    y[i] = rng.bernoulli(expit_d(eta)) ? 1 : 0;
    if (biased && flip) y[i] = 1 - y[i];
  }
  return from_arrays(x, y, a, s);
}

Eigen::VectorXd beta1() {
  Eigen::VectorXd b(3);
  b << 0.4, 0.6, -0.4;
  return b;
}

Eigen::VectorXd beta0() {
  Eigen::VectorXd b(3);
  b << -0.4, 0.8, -0.5;
  return b;
}

// With a binary outcome an anomaly is visible to the scores only where it
// makes the observed outcome locally rare, so tests that need detectable bias
// use near-deterministic laws.  The symmetric one keeps both outcome classes
// populated (LC-NN calibrates within class); the leaning one turns a negative
// logit shift into a directional bias across most of the covariate space.
Eigen::VectorXd beta0_steep() {
  Eigen::VectorXd b(3);
  b << 0.0, 3.0, 3.0;
  return b;
}

Eigen::VectorXd beta0_lean() {
  Eigen::VectorXd b(3);
  b << 2.0, 1.5, 1.5;
  return b;
}

}  // namespace

TEST_CASE("nearest-neighbor score hand values") {
  Eigen::MatrixXd xr(3, 1);
  xr << 1, -2, 0.2;
  Eigen::VectorXi yr(3);
  yr << 1, 1, 0;
  Eigen::RowVectorXd xj(1);
  xj << 0;
  CHECK(conformal_score_nn(xj, 1, xr, yr) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(conformal_score_nn(xj, 0, xr, yr) == doctest::Approx(0.2).epsilon(1e-12));
  Eigen::VectorXi y_none = Eigen::VectorXi::Zero(3);
  CHECK(std::isinf(conformal_score_nn(xj, 1, xr, y_none)));

  Eigen::MatrixXd x2(1, 2);
  x2 << 3, 4;
  Eigen::VectorXi y2(1);
  y2 << 1;
  Eigen::RowVectorXd origin(2);
  origin << 0, 0;
  CHECK(conformal_score_nn(origin, 1, x2, y2) ==
        doctest::Approx(5.0).epsilon(1e-15));
}

TEST_CASE("SAR score hand values") {
  CHECK(conformal_score_sar(1, 0.5) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(conformal_score_sar(0, 0.8) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(conformal_score_sar(1, 1.0 - 1e-9) < 1e-5);  // variance floor
}

TEST_CASE("conformal p counting rule") {
  std::vector<double> calib{1, 2, 3};
  CHECK(conformal_p_count(calib, 2.5) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(conformal_p_count(calib, 0.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(conformal_p_count(calib, 10.0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(conformal_p_count({}, 5.0) == 1.0);
  double inf = std::numeric_limits<double>::infinity();
  CHECK(conformal_p_count({inf, 1.0}, inf) ==
        doctest::Approx(1.0 / 3).epsilon(1e-15));
}

TEST_CASE("single-split p-values live on the calibration lattice") {
  Rng rng(31);
  auto ds = draw_hybrid(rng, 6, 5, 8, beta1(), beta0());
  ConformalConfig cfg;
  cfg.folds = 1;
  cfg.seed = 9;
  auto pv = conformal_pvalues(ds, cfg);
  REQUIRE(pv.ec_ids.size() == 8);
  // 5 controls: 3 train, 2 calibration
  for (int j = 0; j < pv.p.size(); ++j) {
    CHECK(pv.p[j] > 0.0);
    CHECK(pv.p[j] <= 1.0);
    CHECK(std::abs(pv.p[j] * 3 - std::round(pv.p[j] * 3)) < 1e-9);
  }

  ConformalConfig cv = cfg;
  cv.folds = 5;
  auto pv2 = conformal_pvalues(ds, cv);
  for (int j = 0; j < pv2.p.size(); ++j) {
    CHECK(pv2.p[j] > 0.0);
    CHECK(pv2.p[j] <= 1.0);
  }

  ConformalConfig bad = cfg;
  bad.folds = 6;
  CHECK_THROWS_AS(conformal_pvalues(ds, bad), Error);
}

TEST_CASE("selection is strict and monotone") {
  ConformalPvalues pv;
  pv.ec_ids = {10, 11, 12};
  pv.p = Eigen::VectorXd(3);
  pv.p << 0.1, 0.5, 0.9;
  auto r = select(pv, 0.3);
  CHECK(r.selected == std::vector<int>{11, 12});
  CHECK(select(pv, 1.0).selected.empty());
  CHECK(select(pv, 0.0).selected.size() == 3);
  CHECK(select(pv, 0.5).selected == std::vector<int>{12});  // strict at ties

  Rng rng(7);
  for (int k = 0; k < 50; ++k) {
    double g1 = rng.uniform01(), g2 = rng.uniform01();
    if (g1 > g2) std::swap(g1, g2);
    auto lo = select(pv, g1).selected, hi = select(pv, g2).selected;
    CHECK(std::includes(lo.begin(), lo.end(), hi.begin(), hi.end()));
  }
  CHECK_THROWS_AS(select(pv, 1.5), Error);
}

TEST_CASE("csb endpoints match no-borrow and full-borrow bit for bit") {
  Rng rng(52);
  auto ds = draw_hybrid(rng, 15, 15, 10, beta1(), beta0());
  ConformalConfig cfg;
  cfg.folds = 5;
  cfg.seed = 3;
  auto pv = conformal_pvalues(ds, cfg);

  for (auto est : {Estimand::rd, Estimand::odds}) {
    auto gamma1 = csb_estimate(ds, select(pv, 1.0), est);
    NuisanceBundle nb = fit_bundle(ds, {});
    auto covadj = asymptotic_inference(ds, theta_covadj(ds, nb, 1),
                                       theta_covadj(ds, nb, 0), est);
    CHECK(gamma1.point == covadj.point);
    CHECK(gamma1.se == covadj.se);
    CHECK(gamma1.ci_low == covadj.ci_low);
    CHECK(gamma1.p_asym == covadj.p_asym);
    CHECK(gamma1.n_borrowed == 0);

    auto gamma0 = csb_estimate(ds, select(pv, 0.0), est);
    NuisanceBundle nb2 = fit_bundle(ds, all_ec_ids(ds));
    auto aipw = asymptotic_inference(ds, theta_covadj(ds, nb2, 1),
                                     theta0_aipw(ds, nb2, all_ec_ids(ds)), est);
    CHECK(gamma0.point == aipw.point);
    CHECK(gamma0.se == aipw.se);
    CHECK(gamma0.ci_low == aipw.ci_low);
    CHECK(gamma0.p_asym == aipw.p_asym);
    CHECK(gamma0.n_borrowed == 10);
  }

  // selection from another dataset is rejected
  Rng rng2(53);
  auto other = draw_hybrid(rng2, 15, 15, 9, beta1(), beta0());
  CHECK_THROWS_AS(csb_estimate(other, select(pv, 0.5), Estimand::rd), Error);
}

TEST_CASE("conformal p-values are super-uniform under exchangeability") {
  for (auto score : {ConformalConfig::Score::nn, ConformalConfig::Score::lcnn,
                     ConformalConfig::Score::sar}) {
    Rng rng(600 + static_cast<int>(score));
    std::vector<double> ps;
    ConformalConfig cfg;
    cfg.score = score;
    cfg.folds = 1;
    for (int rep = 0; rep < 100; ++rep) {
      auto ds = draw_hybrid(rng, 10, 25, 20, beta1(), beta0());
      cfg.seed = rng.next_u64();
      auto pv = conformal_pvalues(ds, cfg);
      for (int j = 0; j < pv.p.size(); ++j) ps.push_back(pv.p[j]);
    }
    REQUIRE(ps.size() == 2000);
    for (double t = 0.05; t <= 0.5001; t += 0.05) {
      double cdf = 0;
      for (double p : ps) cdf += p <= t;
      cdf /= ps.size();
      double mc_se = std::sqrt(t * (1 - t) / ps.size());
      CHECK(cdf <= t + 3 * mc_se);
    }
  }
}

TEST_CASE("outcome-flipped ECs earn smaller p-values") {
  for (auto score : {ConformalConfig::Score::nn, ConformalConfig::Score::lcnn,
                     ConformalConfig::Score::sar}) {
    Rng rng(41 + static_cast<int>(score));
    double sum_clean = 0, sum_biased = 0;
    int n_clean = 0, n_biased = 0;
    ConformalConfig cfg;
    cfg.score = score;
    // 60 controls / 5 folds -> 12 calibration units per fold; smaller folds
    // floor the per-fold p (LC-NN splits calibration by outcome, so it needs
    // the most headroom) and cap the visible gap.
    cfg.folds = 5;
    for (int rep = 0; rep < 80; ++rep) {
      auto ds =
          draw_hybrid(rng, 10, 60, 20, beta1(), beta0_steep(), 10, 0.0, true);
      cfg.seed = rng.next_u64();
      auto pv = conformal_pvalues(ds, cfg);
      for (size_t j = 0; j < pv.ec_ids.size(); ++j) {
        if (j < 10) {
          sum_clean += pv.p[j];
          ++n_clean;
        } else {
          sum_biased += pv.p[j];
          ++n_biased;
        }
      }
    }
    CHECK(sum_biased / n_biased < sum_clean / n_clean - 0.1);
  }
}

TEST_CASE("LC-NN with no same-outcome calibration gives p = 1 and a flag") {
  Eigen::MatrixXd x(10, 1);
  Eigen::VectorXi y(10), a(10), s(10);
  for (int i = 0; i < 10; ++i) {
    x(i, 0) = 0.3 * i;
    s[i] = i < 9;
    a[i] = i < 3;
    y[i] = i < 3 ? i % 2 : 0;  // all controls share outcome 0
  }
  y[9] = 1;  // the EC outcome no calibration unit matches
  auto ds = from_arrays(x, y, a, s);
  ConformalConfig cfg;
  cfg.score = ConformalConfig::Score::lcnn;
  cfg.folds = 2;
  auto pv = conformal_pvalues(ds, cfg);
  REQUIRE(pv.ec_ids.size() == 1);
  CHECK(pv.p[0] == 1.0);
  CHECK(pv.lcnn_empty_fold);
}

TEST_CASE("p-value multiset is invariant to EC row order") {
  Rng rng(88);
  auto ds = draw_hybrid(rng, 8, 12, 10, beta1(), beta0());
  TrialDataset rev = ds;
  const int n_rct = 20;
  for (int j = 0; j < 10; ++j) {
    int src = n_rct + 9 - j, dst = n_rct + j;
    rev.x.row(dst) = ds.x.row(src);
    rev.y[dst] = ds.y[src];
    rev.a[dst] = ds.a[src];
    rev.s[dst] = ds.s[src];
  }
  ConformalConfig cfg;
  cfg.folds = 4;
  cfg.seed = 5;
  auto p1 = conformal_pvalues(ds, cfg).p;
  auto p2 = conformal_pvalues(rev, cfg).p;
  std::vector<double> v1(p1.data(), p1.data() + p1.size());
  std::vector<double> v2(p2.data(), p2.data() + p2.size());
  std::sort(v1.begin(), v1.end());
  std::sort(v2.begin(), v2.end());
  CHECK(v1 == v2);
}

TEST_CASE("adaptive gamma: singleton grid and determinism") {
  Rng rng(19);
  auto ds = draw_hybrid(rng, 10, 10, 8, beta1(), beta0());
  ConformalConfig cfg;
  cfg.folds = 5;
  cfg.seed = 11;
  cfg.bootstrap_reps = 10;
  cfg.gamma_grid = {1.0};
  CHECK(adaptive_gamma(ds, cfg).gamma_hat == 1.0);

  cfg.gamma_grid = {0.0, 0.5, 1.0};
  cfg.bootstrap_reps = 20;
  auto r1 = adaptive_gamma(ds, cfg, {}, 1);
  auto r2 = adaptive_gamma(ds, cfg, {}, 1);
  auto r3 = adaptive_gamma(ds, cfg, {}, 3);
  CHECK(r1.gamma_hat == r2.gamma_hat);
  CHECK(r1.mse == r2.mse);
  CHECK(r1.mse == r3.mse);
  CHECK(r1.tau == r3.tau);

  ConformalConfig bad = cfg;
  bad.gamma_grid = {0.5, 0.5};
  CHECK_THROWS_AS(adaptive_gamma(ds, bad), Error);
}

TEST_CASE("adaptive gamma favors borrowing exchangeable ECs") {
  Rng rng(1234);
  ConformalConfig cfg;
  cfg.folds = 5;
  cfg.bootstrap_reps = 50;
  cfg.gamma_grid = {0.0, 0.5, 1.0};
  int borrow_better = 0;
  double sum_front = 0, sum_back = 0;
  const int reps = 200;
  for (int rep = 0; rep < reps; ++rep) {
    auto ds = draw_hybrid(rng, 20, 20, 60, beta1(), beta0());
    cfg.seed = rng.next_u64();
    auto r = adaptive_gamma(ds, cfg);
    if (r.mse.front() < r.mse.back()) ++borrow_better;
    sum_front += r.mse.front();
    sum_back += r.mse.back();
  }
  // The per-replicate comparison rides on a squared-difference term with
  // chi-square noise, so only the averaged criterion is a sharp claim.
  CHECK(sum_front < sum_back);
  CHECK(borrow_better >= 0.65 * reps);
}

TEST_CASE("adaptive gamma screens out heavily biased ECs") {
  Rng rng(5678);
  ConformalConfig cfg;
  cfg.folds = 5;
  cfg.bootstrap_reps = 50;
  cfg.gamma_grid = {0.0, 0.5, 1.0};
  int positive = 0;
  const int reps = 200;
  for (int rep = 0; rep < reps; ++rep) {
    auto ds = draw_hybrid(rng, 20, 20, 40, beta1(), beta0_lean(), 40, -6.0);
    cfg.seed = rng.next_u64();
    auto r = adaptive_gamma(ds, cfg);
    if (r.gamma_hat > 0.0) ++positive;
  }
  CHECK(positive >= 0.6 * reps);
}
