#include "estimators.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>

#include "error.hpp"
#include "logistic.hpp"

namespace hctb {

const char* estimand_name(Estimand e) {
  switch (e) {
    case Estimand::rd:
      return "rd";
    case Estimand::rr:
      return "rr";
    case Estimand::odds:
      return "or";
  }
  return "rd";
}

Estimand parse_estimand(const std::string& name) {
  if (name == "rd") return Estimand::rd;
  if (name == "rr") return Estimand::rr;
  if (name == "or") return Estimand::odds;
  fail(Status::invalid_argument, "unknown estimand: " + name);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    fail(Status::invalid_argument, "normal_quantile: p must be in (0,1)");
  // Acklam's rational approximation, polished with Halley steps against the
  // erfc-based CDF.
  static const double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                              -2.759285104469687e+02, 1.383577518672690e+02,
                              -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                              -1.556989798598866e+02, 6.680131188771972e+01,
                              -1.328068155288572e+01};
  static const double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                              -2.400758277161838e+00, -2.549732539343734e+00,
                              4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p > 1.0 - plow) {
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  for (int it = 0; it < 2; ++it) {
    double e = normal_cdf(x) - p;
    double u = e * 2.5066282746310002 * std::exp(x * x / 2.0);  // sqrt(2*pi)
    x -= u / (1.0 + x * u / 2.0);
  }
  return x;
}

namespace {

Eigen::VectorXd to_vec(const std::vector<double>& v) {
  Eigen::VectorXd out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[static_cast<int>(i)] = v[i];
  return out;
}

double clamp01(double v, bool* clipped) {
  if (v < 0.0) {
    *clipped = true;
    return 0.0;
  }
  if (v > 1.0) {
    *clipped = true;
    return 1.0;
  }
  return v;
}

void check_bundle(const TrialDataset& ds, const NuisanceBundle& nb) {
  if (nb.e.size() != ds.n())
    fail(Status::invalid_argument, "nuisance bundle does not match dataset");
}

// Weights on the borrowed ECs are kept on a common arbitrary scale; Kish ESS
// is invariant to it.
double ec_ess(const std::vector<int>& ids, const Eigen::VectorXd& w) {
  if (ids.empty()) return 0.0;
  std::vector<double> v(w.data(), w.data() + w.size());
  return ess(v);
}

Eigen::VectorXd xi_arm(const TrialDataset& ds, const NuisanceBundle& nb,
                       int arm) {
  const int n = ds.n();
  Eigen::VectorXd xi = Eigen::VectorXd::Zero(n);
  const Eigen::VectorXd& mu = arm == 1 ? nb.mu1_r : nb.mu0_r;
  for (int i = 0; i < n; ++i) {
    if (ds.s[i] != 1) continue;
    double ea = arm == 1 ? nb.e[i] : 1.0 - nb.e[i];
    double ind = ds.a[i] == arm ? 1.0 : 0.0;
    xi[i] = ind / ea * (ds.y[i] - mu[i]) + mu[i];
  }
  return xi;
}

// phi-style weight on the control residual: pi * [S(1-A) + (1-S) r] /
// [pi (1-e) + (1-pi) r], restricted to the borrowed subset on the EC side.
Eigen::VectorXd aipw_control_weight(const TrialDataset& ds,
                                    const NuisanceBundle& nb) {
  const int n = ds.n();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    double num;
    if (ds.s[i] == 1)
      num = ds.a[i] == 0 ? 1.0 : 0.0;
    else
      num = nb.in_subset[i] ? nb.r[i] : 0.0;
    if (num == 0.0) continue;
    double den = nb.pi[i] * (1.0 - nb.e[i]) + (1.0 - nb.pi[i]) * nb.r[i];
    if (den <= 0.0) fail(Status::numeric, "degenerate borrowing weight");
    w[i] = nb.pi[i] * num / den;
  }
  return w;
}

// Calibration-weighted analogue with entropy-balancing odds q in place of
// pi/(1-pi). Falls back to the plug-in odds when balancing does not converge.
Eigen::VectorXd cw_control_weight(const TrialDataset& ds,
                                  const NuisanceBundle& nb,
                                  bool* eb_fallback) {
  const int n = ds.n();
  Eigen::MatrixXd x_rct(ds.n_rct(), ds.p());
  Eigen::MatrixXd x_ec(ds.n_ec(), ds.p());
  int ir = 0, ie = 0;
  for (int i = 0; i < n; ++i) {
    if (ds.s[i] == 1)
      x_rct.row(ir++) = ds.x.row(i);
    else
      x_ec.row(ie++) = ds.x.row(i);
  }
  EntropyBalance eb = entropy_balance(x_ec, x_rct);
  Eigen::VectorXd q;
  if (eb.converged) {
    q = eb.q_at(ds.x);
  } else {
    *eb_fallback = true;
    q = (nb.pi.array() / (1.0 - nb.pi.array())).matrix();
  }
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    double num = ds.s[i] == 1 ? (ds.a[i] == 0 ? 1.0 : 0.0) : nb.r[i];
    if (num == 0.0) continue;
    double den = q[i] * (1.0 - nb.e[i]) + nb.r[i];
    if (den <= 0.0) fail(Status::numeric, "degenerate calibration weight");
    w[i] = q[i] * num / den;
  }
  return w;
}

ThetaEstimate ht_theta1(const TrialDataset& ds, const NuisanceBundle& nb,
                        const char* method) {
  const int n = ds.n();
  const double pi_r = static_cast<double>(ds.n_rct()) / n;
  ThetaEstimate th;
  th.arm = 1;
  th.frame = Frame::borrow;
  th.method = method;
  th.per_unit = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i)
    if (ds.s[i] == 1 && ds.a[i] == 1)
      th.per_unit[i] = ds.y[i] / nb.e[i] / pi_r;
  th.value = clamp01(th.per_unit.mean(), &th.clipped);
  return th;
}

ThetaEstimate weighted_theta0(const TrialDataset& ds, const Eigen::VectorXd& w,
                              const char* method) {
  const int n = ds.n();
  const double pi_r = static_cast<double>(ds.n_rct()) / n;
  ThetaEstimate th;
  th.arm = 0;
  th.frame = Frame::borrow;
  th.method = method;
  th.per_unit = Eigen::VectorXd::Zero(n);
  std::vector<double> ecw;
  for (int i = 0; i < n; ++i) {
    if (w[i] != 0.0) th.per_unit[i] = w[i] * ds.y[i] / pi_r;
    if (ds.s[i] == 0 && w[i] != 0.0) {
      th.borrowed_ids.push_back(i);
      ecw.push_back(w[i]);
    }
  }
  th.ec_weight = to_vec(ecw);
  th.value = clamp01(th.per_unit.mean(), &th.clipped);
  return th;
}

}  // namespace

ThetaEstimate theta_unadj(const TrialDataset& ds, int arm) {
  const int n = ds.n();
  int n_arm = arm == 1 ? ds.n_treated() : ds.n_control();
  if (n_arm == 0) fail(Status::invalid_argument, "empty RCT arm");
  ThetaEstimate th;
  th.arm = arm;
  th.frame = Frame::rct;
  th.method = "unadj";
  th.per_unit = Eigen::VectorXd::Zero(n);
  double sum = 0;
  const double e_arm = static_cast<double>(n_arm) / ds.n_rct();
  for (int i = 0; i < n; ++i) {
    if (ds.s[i] != 1 || ds.a[i] != arm) continue;
    sum += ds.y[i];
    th.per_unit[i] = ds.y[i] / e_arm;
  }
  th.value = sum / n_arm;
  return th;
}

ThetaEstimate theta_covadj(const TrialDataset& ds, const NuisanceBundle& nb,
                           int arm) {
  check_bundle(ds, nb);
  int n_arm = arm == 1 ? ds.n_treated() : ds.n_control();
  if (n_arm == 0) fail(Status::invalid_argument, "empty RCT arm");
  ThetaEstimate th;
  th.arm = arm;
  th.frame = Frame::rct;
  th.method = "covadj";
  th.per_unit = xi_arm(ds, nb, arm);
  th.value = clamp01(th.per_unit.sum() / ds.n_rct(), &th.clipped);
  return th;
}

ThetaEstimate theta0_aipw(const TrialDataset& ds, const NuisanceBundle& nb,
                          const std::vector<int>& ec_subset) {
  check_bundle(ds, nb);
  if (ec_subset.empty())
    fail(Status::invalid_argument,
         "theta0_aipw: empty EC subset; use theta_covadj");
  if (static_cast<int>(ec_subset.size()) != nb.n_subset_ec || nb.rct_only)
    fail(Status::invalid_argument, "bundle was not fitted for this EC subset");
  for (int id : ec_subset) {
    if (id < 0 || id >= ds.n() || ds.s[id] != 0 || !nb.in_subset[id])
      fail(Status::invalid_argument, "bundle was not fitted for this EC subset");
  }
  const int n = ds.n();
  const double pi_r = static_cast<double>(ds.n_rct()) / n;
  Eigen::VectorXd w = aipw_control_weight(ds, nb);
  ThetaEstimate th;
  th.arm = 0;
  th.frame = Frame::borrow;
  th.method = "aipw";
  th.per_unit = Eigen::VectorXd::Zero(n);
  std::vector<double> ecw;
  for (int i = 0; i < n; ++i) {
    double s = ds.s[i] == 1 ? 1.0 : 0.0;
    th.per_unit[i] =
        (w[i] * (ds.y[i] - nb.mu0_re[i]) + s * nb.mu0_re[i]) / pi_r;
    if (ds.s[i] == 0 && w[i] != 0.0) {
      th.borrowed_ids.push_back(i);
      ecw.push_back(w[i]);
    }
  }
  th.ec_weight = to_vec(ecw);
  th.value = clamp01(th.per_unit.mean(), &th.clipped);
  return th;
}

ThetaPair borrow_naive(const TrialDataset& ds, const NuisanceBundle& nb) {
  check_bundle(ds, nb);
  if (ds.n_ec() == 0)
    fail(Status::invalid_argument, "borrowing requires external controls");
  if (ds.n_treated() == 0 || ds.n_control() + ds.n_ec() == 0)
    fail(Status::invalid_argument, "zero total weight in an arm component");
  const int n = ds.n();
  // The pooled estimator ignores S entirely: the propensity is refit on all
  // units and the control outcome model is the RCT+EC fit.
  Eigen::VectorXd a_resp(n);
  for (int i = 0; i < n; ++i) a_resp[i] = ds.a[i];
  LogisticFit fit = fit_logistic(ds.x, a_resp);
  Eigen::VectorXd ep = predict_prob(fit, ds.x);

  ThetaPair pr;
  for (int arm : {1, 0}) {
    ThetaEstimate th;
    th.arm = arm;
    th.frame = Frame::pooled;
    th.method = "naive";
    th.per_unit = Eigen::VectorXd::Zero(n);
    const Eigen::VectorXd& mu = arm == 1 ? nb.mu1_r : nb.mu0_re;
    std::vector<double> ecw;
    for (int i = 0; i < n; ++i) {
      double ea = arm == 1 ? ep[i] : 1.0 - ep[i];
      double ind = ds.a[i] == arm ? 1.0 : 0.0;
      th.per_unit[i] = ind / ea * (ds.y[i] - mu[i]) + mu[i];
      if (arm == 0 && ds.s[i] == 0) {
        th.borrowed_ids.push_back(i);
        ecw.push_back(1.0 / ea);
      }
    }
    th.ec_weight = to_vec(ecw);
    th.value = clamp01(th.per_unit.mean(), &th.clipped);
    (arm == 1 ? pr.th1 : pr.th0) = th;
  }
  return pr;
}

ThetaPair borrow_ipw(const TrialDataset& ds, const NuisanceBundle& nb) {
  check_bundle(ds, nb);
  if (ds.n_ec() == 0)
    fail(Status::invalid_argument, "borrowing requires external controls");
  if (ds.n_treated() == 0)
    fail(Status::invalid_argument, "zero total weight in an arm component");
  ThetaPair pr;
  pr.th1 = ht_theta1(ds, nb, "ipw");
  pr.th0 = weighted_theta0(ds, aipw_control_weight(ds, nb), "ipw");
  return pr;
}

ThetaPair borrow_cw(const TrialDataset& ds, const NuisanceBundle& nb) {
  check_bundle(ds, nb);
  if (ds.n_ec() == 0)
    fail(Status::invalid_argument, "borrowing requires external controls");
  if (ds.n_treated() == 0)
    fail(Status::invalid_argument, "zero total weight in an arm component");
  ThetaPair pr;
  pr.th1 = ht_theta1(ds, nb, "cw");
  pr.th0 = weighted_theta0(ds, cw_control_weight(ds, nb, &pr.eb_fallback), "cw");
  return pr;
}

ThetaPair borrow_om(const TrialDataset& ds, const NuisanceBundle& nb) {
  check_bundle(ds, nb);
  if (ds.n_ec() == 0)
    fail(Status::invalid_argument, "borrowing requires external controls");
  const int n = ds.n();
  const double pi_r = static_cast<double>(ds.n_rct()) / n;
  ThetaPair pr;
  for (int arm : {1, 0}) {
    ThetaEstimate th;
    th.arm = arm;
    th.frame = Frame::borrow;
    th.method = "om";
    th.per_unit = Eigen::VectorXd::Zero(n);
    const Eigen::VectorXd& mu = arm == 1 ? nb.mu1_r : nb.mu0_re;
    for (int i = 0; i < n; ++i)
      if (ds.s[i] == 1) th.per_unit[i] = mu[i] / pi_r;
    th.value = clamp01(th.per_unit.mean(), &th.clipped);
    if (arm == 0) {
      // ECs enter only through the outcome fit; report them at unit weight.
      for (int i = 0; i < n; ++i)
        if (ds.s[i] == 0) th.borrowed_ids.push_back(i);
      th.ec_weight = Eigen::VectorXd::Ones(ds.n_ec());
    }
    (arm == 1 ? pr.th1 : pr.th0) = th;
  }
  return pr;
}

ThetaPair borrow_acw(const TrialDataset& ds, const NuisanceBundle& nb) {
  check_bundle(ds, nb);
  if (ds.n_ec() == 0)
    fail(Status::invalid_argument, "borrowing requires external controls");
  if (ds.n_treated() == 0)
    fail(Status::invalid_argument, "zero total weight in an arm component");
  const int n = ds.n();
  const double pi_r = static_cast<double>(ds.n_rct()) / n;
  ThetaPair pr;

  Eigen::VectorXd xi1 = xi_arm(ds, nb, 1);
  pr.th1.arm = 1;
  pr.th1.frame = Frame::borrow;
  pr.th1.method = "acw";
  pr.th1.per_unit = xi1 / pi_r;
  pr.th1.value = clamp01(pr.th1.per_unit.mean(), &pr.th1.clipped);

  Eigen::VectorXd w = cw_control_weight(ds, nb, &pr.eb_fallback);
  ThetaEstimate th0;
  th0.arm = 0;
  th0.frame = Frame::borrow;
  th0.method = "acw";
  th0.per_unit = Eigen::VectorXd::Zero(n);
  std::vector<double> ecw;
  for (int i = 0; i < n; ++i) {
    double s = ds.s[i] == 1 ? 1.0 : 0.0;
    th0.per_unit[i] =
        (w[i] * (ds.y[i] - nb.mu0_re[i]) + s * nb.mu0_re[i]) / pi_r;
    if (ds.s[i] == 0 && w[i] != 0.0) {
      th0.borrowed_ids.push_back(i);
      ecw.push_back(w[i]);
    }
  }
  th0.ec_weight = to_vec(ecw);
  th0.value = clamp01(th0.per_unit.mean(), &th0.clipped);
  pr.th0 = th0;
  return pr;
}

double plug_in(double theta1, double theta0, Estimand estimand) {
  switch (estimand) {
    case Estimand::rd:
      return theta1 - theta0;
    case Estimand::rr:
      if (theta0 <= 0.0)
        fail(Status::invalid_argument, "estimand undefined at boundary");
      return theta1 / theta0;
    case Estimand::odds:
      if (theta0 <= 0.0 || theta0 >= 1.0 || theta1 < 0.0 || theta1 >= 1.0)
        fail(Status::invalid_argument, "estimand undefined at boundary");
      return (theta1 / (1.0 - theta1)) / (theta0 / (1.0 - theta0));
  }
  fail(Status::internal, "unreachable");
}

EffectEstimate asymptotic_inference(const TrialDataset& ds,
                                    const ThetaEstimate& th1,
                                    const ThetaEstimate& th0,
                                    Estimand estimand, double alpha) {
  const int n = ds.n();
  if (th1.per_unit.size() != n || th0.per_unit.size() != n)
    fail(Status::invalid_argument, "per-unit contributions missing");
  if (!(alpha > 0.0 && alpha < 1.0))
    fail(Status::invalid_argument, "alpha must be in (0,1)");
  const double pi_r = static_cast<double>(ds.n_rct()) / n;

  // Reconcile frames: an RCT-frame xi vector lifts to the borrow frame as
  // phi_i = (S_i/pi_R) xi_i; the pooled frame never mixes with the others.
  Frame frame = th1.frame;
  Eigen::VectorXd h1 = th1.per_unit, h0 = th0.per_unit;
  if (th1.frame != th0.frame) {
    if (th1.frame == Frame::pooled || th0.frame == Frame::pooled)
      fail(Status::invalid_argument, "incompatible sampling frames");
    frame = Frame::borrow;
    if (th1.frame == Frame::rct) h1 /= pi_r;
    if (th0.frame == Frame::rct) h0 /= pi_r;
  }

  EffectEstimate est;
  est.estimand = estimand;
  est.alpha = alpha;
  est.n_borrowed = static_cast<int>(th0.borrowed_ids.size());
  est.ess = ec_ess(th0.borrowed_ids, th0.ec_weight);

  double t1 = th1.value, t0 = th0.value;
  if (estimand != Estimand::rd) {
    double c1 = std::clamp(t1, kProbClip, 1.0 - kProbClip);
    double c0 = std::clamp(t0, kProbClip, 1.0 - kProbClip);
    if (c1 != t1 || c0 != t0) est.boundary_clipped = true;
    t1 = c1;
    t0 = c0;
  }
  est.point = plug_in(t1, t0, estimand);
  const double tau = est.point;

  // Per-unit influence values and the averaging frame size. In the RCT frame
  // the sum runs over RCT units with centering weight 1; in the borrow and
  // pooled frames over all units with weight S_i/pi_R resp. 1.
  const int m = frame == Frame::rct ? ds.n_rct() : n;
  double ssq = 0.0;
  for (int i = 0; i < n; ++i) {
    double omega;
    if (frame == Frame::rct) {
      if (ds.s[i] != 1) continue;
      omega = 1.0;
    } else {
      omega = frame == Frame::borrow ? (ds.s[i] == 1 ? 1.0 / pi_r : 0.0) : 1.0;
    }
    double inf;
    switch (estimand) {
      case Estimand::rd:
        inf = h1[i] - h0[i] - omega * tau;
        break;
      case Estimand::rr:
        // theta1 - tau_RR theta0 = 0, so the centering terms cancel.
        inf = (h1[i] - tau * h0[i]) / t0;
        break;
      case Estimand::odds:
      default:
        inf = (1.0 - t0) / t0 *
              ((h1[i] - omega * t1) / ((1.0 - t1) * (1.0 - t1)) -
               tau * (h0[i] - omega * t0) / ((1.0 - t0) * (1.0 - t0)));
        break;
    }
    ssq += inf * inf;
  }
  double vhat = ssq / m;
  est.se = std::sqrt(vhat / m);

  const double z = normal_quantile(1.0 - alpha / 2.0);
  if (estimand == Estimand::rd) {
    est.ci_low = est.point - z * est.se;
    est.ci_high = est.point + z * est.se;
    est.p_asym = est.se > 0.0
                     ? 2.0 * normal_cdf(-std::abs(est.point) / est.se)
                     : (est.point == 0.0 ? 1.0 : 0.0);
  } else {
    double se_log = est.se / est.point;
    est.ci_low = est.point * std::exp(-z * se_log);
    est.ci_high = est.point * std::exp(z * se_log);
    double lt = std::log(est.point);
    est.p_asym = se_log > 0.0 ? 2.0 * normal_cdf(-std::abs(lt) / se_log)
                              : (lt == 0.0 ? 1.0 : 0.0);
  }
  est.p_asym = std::clamp(est.p_asym, DBL_MIN, 1.0);
  return est;
}

}  // namespace hctb
