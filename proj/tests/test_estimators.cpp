#include <cmath>
#include <vector>

#include "doctest.h"
#include "estimators.hpp"
#include "logistic.hpp"
#include "rng.hpp"

using namespace hctb;

namespace {

NuisanceBundle const_bundle(const TrialDataset& ds, double e, double pi,
                            double r, double mu1, double mu0, double mu0re) {
  NuisanceBundle nb;
  const int n = ds.n();
  nb.e_known = e;
  nb.e = Eigen::VectorXd::Constant(n, e);
  nb.pi = Eigen::VectorXd::Constant(n, pi);
  nb.mu1_r = Eigen::VectorXd::Constant(n, mu1);
  nb.mu0_r = Eigen::VectorXd::Constant(n, mu0);
  nb.mu0_re = Eigen::VectorXd::Constant(n, mu0re);
  nb.r = Eigen::VectorXd::Constant(n, r);
  nb.in_subset.assign(n, 1);
  nb.n_subset_ec = ds.n_ec();
  return nb;
}

// 4-unit RCT: A = {1,1,0,0}, Y = {1,0,0,1}.
TrialDataset hand_rct() {
  Eigen::MatrixXd x(4, 1);
  x << 0.1, -0.2, 0.3, -0.4;
  Eigen::VectorXi y(4), a(4), s(4);
  y << 1, 0, 0, 1;
  a << 1, 1, 0, 0;
  s << 1, 1, 1, 1;
  return from_arrays(x, y, a, s);
}

TrialDataset hand_hybrid(int y_ec0, int y_ec1) {
  Eigen::MatrixXd x(6, 1);
  x << 0.1, -0.2, 0.3, -0.4, 0.3, -0.4;
  Eigen::VectorXi y(6), a(6), s(6);
  y << 1, 0, 0, 1, y_ec0, y_ec1;
  a << 1, 1, 0, 0, 0, 0;
  s << 1, 1, 1, 1, 0, 0;
  return from_arrays(x, y, a, s);
}

double expit_d(double v) { return 1.0 / (1.0 + std::exp(-v)); }

double mu_true(const Eigen::RowVectorXd& xr, const Eigen::VectorXd& beta) {
  double eta = beta[0];
  for (int j = 0; j < xr.size(); ++j) eta += beta[j + 1] * xr[j];
  return expit_d(eta);
}

// Hybrid draw with ECs from the same covariate and outcome law as the RCT
// controls (no shift, no hidden bias).
TrialDataset draw_no_shift(Rng& rng, int n1, int n0, int n_ec,
                           const Eigen::VectorXd& b1,
                           const Eigen::VectorXd& b0) {
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
    double mu = a[i] == 1 ? mu_true(x.row(i), b1) : mu_true(x.row(i), b0);
    y[i] = rng.bernoulli(mu) ? 1 : 0;
  }
  return from_arrays(x, y, a, s);
}

}  // namespace

TEST_CASE("estimand names round-trip") {
  CHECK(parse_estimand("rd") == Estimand::rd);
  CHECK(parse_estimand("rr") == Estimand::rr);
  CHECK(parse_estimand("or") == Estimand::odds);
  CHECK(estimand_name(Estimand::odds) == std::string("or"));
  CHECK_THROWS_AS(parse_estimand("hr"), Error);
}

TEST_CASE("normal quantile and cdf") {
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963985).epsilon(1e-8));
  CHECK(normal_quantile(0.95) == doctest::Approx(1.644853627).epsilon(1e-8));
  CHECK(normal_quantile(0.995) == doctest::Approx(2.575829304).epsilon(1e-8));
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-12));
  for (double pq : {0.01, 0.3, 0.6, 0.999})
    CHECK(normal_cdf(normal_quantile(pq)) == doctest::Approx(pq).epsilon(1e-12));
  CHECK_THROWS_AS(normal_quantile(0.0), Error);
}

TEST_CASE("theta_unadj is the arm mean") {
  Eigen::MatrixXd x(6, 1);
  x << 0, 0, 0, 0, 0, 0;
  Eigen::VectorXi y(6), a(6), s(6);
  y << 1, 0, 1, 1, 0, 0;
  a << 1, 1, 1, 1, 0, 0;
  s << 1, 1, 1, 1, 1, 1;
  auto ds = from_arrays(x, y, a, s);
  auto th1 = theta_unadj(ds, 1);
  CHECK(th1.value == 0.75);
  CHECK(th1.frame == Frame::rct);
  CHECK(th1.per_unit.sum() / ds.n_rct() == doctest::Approx(0.75).epsilon(1e-15));
  auto th0 = theta_unadj(ds, 0);
  CHECK(th0.value == 0.0);

  // bypass validate() to hit the estimator-level empty-arm guard
  TrialDataset all_treated = ds;
  all_treated.a = Eigen::VectorXi::Ones(6);
  CHECK_THROWS_AS(theta_unadj(all_treated, 0), Error);
}

TEST_CASE("theta_covadj hand evaluation") {
  auto ds = hand_rct();
  auto nb = const_bundle(ds, 0.5, 0.5, 1.0, 0.5, 0.5, 0.5);
  auto th1 = theta_covadj(ds, nb, 1);
  CHECK(th1.per_unit[0] == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(th1.per_unit[1] == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(th1.per_unit[2] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(th1.per_unit[3] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(th1.value == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("theta_covadj constant-outcome and HT reductions") {
  Eigen::MatrixXd x(5, 1);
  x << 1, 2, 3, 4, 5;
  Eigen::VectorXi y(5), a(5), s(5);
  y << 1, 1, 1, 0, 1;
  a << 1, 1, 1, 0, 0;
  s << 1, 1, 1, 1, 1;
  auto ds = from_arrays(x, y, a, s);
  auto nb = const_bundle(ds, 0.6, 0.5, 1.0, 1.0, 0.5, 0.5);
  CHECK(theta_covadj(ds, nb, 1).value == 1.0);

  auto htb = const_bundle(ds, 0.6, 0.5, 1.0, 0.0, 0.0, 0.0);
  for (int arm : {0, 1}) {
    double ea = arm == 1 ? 0.6 : 0.4;
    double ht = 0;
    for (int i = 0; i < 5; ++i)
      if (a[i] == arm) ht += y[i] / ea;
    ht /= ds.n_rct();
    CHECK(theta_covadj(ds, htb, arm).per_unit.sum() / ds.n_rct() ==
          doctest::Approx(ht).epsilon(1e-15));
  }
}

TEST_CASE("theta_covadj with the exact outcome mean is unbiased") {
  Eigen::VectorXd b1(3), b0(3);
  b1 << 0.4, 0.6, -0.4;
  b0 << -0.4, 0.8, -0.5;
  Rng rng(415);
  double t1 = 0, t0 = 0;
  const int big = 400000;
  for (int i = 0; i < big; ++i) {
    Eigen::RowVectorXd xr(2);
    xr << rng.uniform(-2, 2), rng.uniform(-2, 2);
    t1 += mu_true(xr, b1);
    t0 += mu_true(xr, b0);
  }
  t1 /= big;
  t0 /= big;

  const int reps = 2000;
  double s1 = 0, s0 = 0, ss1 = 0, ss0 = 0;
  for (int rep = 0; rep < reps; ++rep) {
    auto ds = draw_no_shift(rng, 25, 25, 0, b1, b0);
    NuisanceBundle nb = const_bundle(ds, 0.5, 0.5, 1.0, 0, 0, 0);
    for (int i = 0; i < ds.n(); ++i) {
      nb.mu1_r[i] = mu_true(ds.x.row(i), b1);
      nb.mu0_r[i] = mu_true(ds.x.row(i), b0);
    }
    double v1 = theta_covadj(ds, nb, 1).value;
    double v0 = theta_covadj(ds, nb, 0).value;
    s1 += v1;
    s0 += v0;
    ss1 += v1 * v1;
    ss0 += v0 * v0;
  }
  double m1 = s1 / reps, m0 = s0 / reps;
  double mcse1 = std::sqrt((ss1 / reps - m1 * m1) / reps);
  double mcse0 = std::sqrt((ss0 / reps - m0 * m0) / reps);
  CHECK(std::abs(m1 - t1) < 2 * mcse1 + 0.002);
  CHECK(std::abs(m0 - t0) < 2 * mcse0 + 0.002);
}

TEST_CASE("theta0_aipw constant-nuisance reduction and subset guards") {
  auto ds = hand_hybrid(0, 1);
  // pooled-control mean over RCT controls {0,1} and ECs {0,1}
  auto nb = const_bundle(ds, 0.5, 0.5, 1.0, 0.5, 0.5, 0.5);
  auto th0 = theta0_aipw(ds, nb, {4, 5});
  CHECK(th0.value == doctest::Approx(0.5).epsilon(1e-10));
  CHECK(th0.frame == Frame::borrow);
  CHECK(th0.borrowed_ids == std::vector<int>{4, 5});

  CHECK_THROWS_AS(theta0_aipw(ds, nb, {}), Error);
  CHECK_THROWS_AS(theta0_aipw(ds, nb, {4}), Error);  // bundle says 2 ECs
  nb.in_subset[5] = 0;
  nb.n_subset_ec = 1;
  CHECK_THROWS_AS(theta0_aipw(ds, nb, {4, 5}), Error);
}

TEST_CASE("borrow_ipw hand evaluation") {
  auto ds = hand_hybrid(1, 1);
  auto nb = const_bundle(ds, 0.5, 0.5, 1.0, 0.5, 0.5, 0.5);
  auto pr = borrow_ipw(ds, nb);
  // weight per control unit: 0.5 / (0.5*0.5 + 0.5*1) = 2/3
  CHECK(pr.th0.value == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(pr.th1.value == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(pr.th0.borrowed_ids.size() == 2);
  CHECK(pr.th0.ec_weight[0] == doctest::Approx(2.0 / 3).epsilon(1e-12));
  CHECK(pr.th0.ec_weight[1] == doctest::Approx(2.0 / 3).epsilon(1e-12));

  auto est = asymptotic_inference(ds, pr.th1, pr.th0, Estimand::rd);
  CHECK(est.n_borrowed == 2);
  CHECK(est.ess == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("borrow_om constant-model reduction") {
  auto ds = hand_hybrid(1, 0);
  auto nb = const_bundle(ds, 0.5, 0.5, 1.0, 0.4, 0.3, 0.3);
  auto pr = borrow_om(ds, nb);
  CHECK(pr.th1.value == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(pr.th0.value == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(plug_in(pr.th1.value, pr.th0.value, Estimand::rd) ==
        doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("plug_in values and boundary errors") {
  CHECK(plug_in(0.4, 0.3, Estimand::rd) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(plug_in(0.4, 0.3, Estimand::rr) ==
        doctest::Approx(4.0 / 3).epsilon(1e-15));
  CHECK(plug_in(0.4, 0.3, Estimand::odds) ==
        doctest::Approx(14.0 / 9).epsilon(1e-15));
  CHECK_THROWS_AS(plug_in(0.4, 0.0, Estimand::rr), Error);
  CHECK_THROWS_AS(plug_in(0.4, 0.0, Estimand::odds), Error);
  CHECK_THROWS_AS(plug_in(1.0, 0.3, Estimand::odds), Error);
}

TEST_CASE("odds ratio identity and monotonicity") {
  Rng rng(77);
  for (int k = 0; k < 300; ++k) {
    double t1 = rng.uniform(0.02, 0.98), t0 = rng.uniform(0.02, 0.98);
    double rr = plug_in(t1, t0, Estimand::rr);
    double orx = plug_in(t1, t0, Estimand::odds);
    CHECK(orx == doctest::Approx(rr * (1 - t0) / (1 - t1)).epsilon(1e-12));
    for (auto est : {Estimand::rd, Estimand::rr, Estimand::odds}) {
      CHECK(plug_in(t1 + 0.01, t0, est) > plug_in(t1, t0, est));
      CHECK(plug_in(t1, t0 + 0.01, est) < plug_in(t1, t0, est));
    }
  }
}

TEST_CASE("asymptotic_inference hand evaluation for RD") {
  auto ds = hand_rct();
  auto nb = const_bundle(ds, 0.5, 0.5, 1.0, 0.5, 0.5, 0.5);
  auto th1 = theta_covadj(ds, nb, 1);
  ThetaEstimate th0;
  th0.arm = 0;
  th0.frame = Frame::rct;
  th0.value = 0.5;
  th0.per_unit = Eigen::VectorXd::Constant(4, 0.5);
  auto est = asymptotic_inference(ds, th1, th0, Estimand::rd);
  CHECK(est.point == doctest::Approx(0.0).epsilon(1e-15));
  // centered diffs {1,-1,0,0}: Vhat = 0.5, se = sqrt(0.5/4)
  CHECK(est.se == doctest::Approx(std::sqrt(0.125)).epsilon(1e-12));
  CHECK(est.p_asym == 1.0);
  double z = normal_quantile(0.975);
  CHECK(est.ci_low == doctest::Approx(-z * est.se).epsilon(1e-12));
  CHECK(est.ci_high == doctest::Approx(z * est.se).epsilon(1e-12));
}

TEST_CASE("identical arms give the null point for every estimand") {
  auto ds = hand_rct();
  ThetaEstimate th1, th0;
  for (auto* th : {&th1, &th0}) {
    th->frame = Frame::rct;
    th->value = 0.4;
    th->per_unit = Eigen::VectorXd::Constant(4, 0.4);
  }
  th1.arm = 1;
  for (auto [est, null_pt] : std::vector<std::pair<Estimand, double>>{
           {Estimand::rd, 0.0}, {Estimand::rr, 1.0}, {Estimand::odds, 1.0}}) {
    auto r = asymptotic_inference(ds, th1, th0, est);
    CHECK(r.point == doctest::Approx(null_pt).epsilon(1e-12));
    CHECK(r.p_asym == 1.0);
    CHECK(r.ci_low <= r.point);
    CHECK(r.ci_high >= r.point);
  }
}

TEST_CASE("all methods produce valid inference on a hybrid dataset") {
  Eigen::VectorXd b1(3), b0(3);
  b1 << 0.4, 0.6, -0.4;
  b0 << -0.4, 0.8, -0.5;
  Rng rng(2024);
  auto ds = draw_no_shift(rng, 20, 15, 12, b1, b0);
  auto nb = fit_bundle(ds, all_ec_ids(ds));

  std::vector<ThetaPair> pairs;
  ThetaPair unadj{theta_unadj(ds, 1), theta_unadj(ds, 0), false};
  ThetaPair covadj{theta_covadj(ds, nb, 1), theta_covadj(ds, nb, 0), false};
  ThetaPair aipw{theta_covadj(ds, nb, 1), theta0_aipw(ds, nb, all_ec_ids(ds)),
                 false};
  pairs.push_back(unadj);
  pairs.push_back(covadj);
  pairs.push_back(aipw);
  pairs.push_back(borrow_naive(ds, nb));
  pairs.push_back(borrow_ipw(ds, nb));
  pairs.push_back(borrow_cw(ds, nb));
  pairs.push_back(borrow_om(ds, nb));
  pairs.push_back(borrow_acw(ds, nb));

  for (const auto& pr : pairs) {
    for (int i = 0; i < ds.n(); ++i)
      if (ds.s[i] == 0 && pr.th1.frame == Frame::rct)
        CHECK(pr.th1.per_unit[i] == 0.0);
    for (auto est : {Estimand::rd, Estimand::rr, Estimand::odds}) {
      auto r = asymptotic_inference(ds, pr.th1, pr.th0, est);
      CHECK(r.se >= 0.0);
      CHECK(r.p_asym > 0.0);
      CHECK(r.p_asym <= 1.0);
      CHECK(r.ci_low <= r.point);
      CHECK(r.ci_high >= r.point);
      if (est != Estimand::rd) CHECK(r.ci_low > 0.0);
      CHECK(std::isfinite(r.se));
    }
  }
  CHECK(asymptotic_inference(ds, aipw.th1, aipw.th0, Estimand::rd).n_borrowed ==
        12);
}

TEST_CASE("entropy balancing falls back to plug-in odds when infeasible") {
  Eigen::MatrixXd x(10, 1);
  Eigen::VectorXi y(10), a(10), s(10);
  for (int i = 0; i < 6; ++i) {
    x(i, 0) = 5.0 + 0.1 * i;
    s[i] = 1;
    a[i] = i < 3;
    y[i] = i % 2;
  }
  for (int i = 6; i < 10; ++i) {
    x(i, 0) = 0.1 * (i - 6);
    s[i] = 0;
    a[i] = 0;
    y[i] = i % 2;
  }
  auto ds = from_arrays(x, y, a, s);
  NuisanceConfig cfg;
  cfg.allow_degenerate = true;
  auto nb = fit_bundle(ds, all_ec_ids(ds), cfg);
  auto pr = borrow_cw(ds, nb);
  CHECK(pr.eb_fallback);
  CHECK(std::isfinite(pr.th0.value));
  CHECK(pr.th0.value >= 0.0);
  CHECK(pr.th0.value <= 1.0);
}

TEST_CASE("borrowing estimators agree under no shift and AIPW covers") {
  Eigen::VectorXd b1(4), b0(4);
  b1 << 0.4, 0.6, -0.4, 0.2;
  b0 << -0.4, 0.8, -0.5, 0.3;
  Rng rng(90210);
  double t1 = 0, t0 = 0;
  const int big = 500000;
  for (int i = 0; i < big; ++i) {
    Eigen::RowVectorXd xr(3);
    xr << rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2);
    t1 += mu_true(xr, b1);
    t0 += mu_true(xr, b0);
  }
  const double tau_true = (t1 - t0) / big;

  const int reps = 1000;
  std::vector<double> mean(6, 0.0);
  int covered = 0;
  for (int rep = 0; rep < reps; ++rep) {
    auto ds = draw_no_shift(rng, 60, 40, 80, b1, b0);
    auto nb = fit_bundle(ds, all_ec_ids(ds));
    auto th1 = theta_covadj(ds, nb, 1);
    auto th0 = theta0_aipw(ds, nb, all_ec_ids(ds));
    auto aipw = asymptotic_inference(ds, th1, th0, Estimand::rd);
    mean[0] += aipw.point;
    if (aipw.ci_low <= tau_true && tau_true <= aipw.ci_high) ++covered;

    ThetaPair prs[5] = {borrow_naive(ds, nb), borrow_ipw(ds, nb),
                        borrow_cw(ds, nb), borrow_om(ds, nb),
                        borrow_acw(ds, nb)};
    for (int k = 0; k < 5; ++k)
      mean[k + 1] += prs[k].th1.value - prs[k].th0.value;
  }
  for (auto& m : mean) m /= reps;

  CHECK(std::abs(mean[0] - tau_true) < 0.01);
  for (int k = 1; k <= 5; ++k) CHECK(std::abs(mean[k] - mean[0]) < 0.02);
  double cov = static_cast<double>(covered) / reps;
  CHECK(cov >= 0.93);
  CHECK(cov <= 0.97);
}
