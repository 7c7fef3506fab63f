#include "nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hctb {

namespace {

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, const std::vector<int>& rows) {
  Eigen::MatrixXd out(static_cast<int>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<int>(i)) = x.row(rows[i]);
  return out;
}

Eigen::VectorXd take_y(const Eigen::VectorXi& y, const std::vector<int>& rows) {
  Eigen::VectorXd out(static_cast<int>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<int>(i)] = y[rows[i]];
  return out;
}

}  // namespace

std::vector<int> all_ec_ids(const TrialDataset& ds) {
  std::vector<int> ids;
  for (int i = 0; i < ds.n(); ++i) {
    if (ds.s[i] == 0) ids.push_back(i);
  }
  return ids;
}

double variance_ratio_value(double m_r, double m_e) {
  const double num = m_r * (1 - m_r);
  const double den = m_e * (1 - m_e);
  const double ratio = den > 0 ? num / den : std::numeric_limits<double>::infinity();
  return std::clamp(ratio, 0.1, 10.0);
}

NuisanceBundle fit_bundle(const TrialDataset& ds, const std::vector<int>& ec_subset,
                          const NuisanceConfig& cfg) {
  const int n = ds.n();
  std::vector<int> rct, rct1, rct0;
  for (int i = 0; i < n; ++i) {
    if (ds.s[i] == 1) {
      rct.push_back(i);
      (ds.a[i] == 1 ? rct1 : rct0).push_back(i);
    }
  }
  if (rct1.empty() || rct0.empty()) fail(Status::validation, "empty RCT arm");
  for (int id : ec_subset) {
    if (id < 0 || id >= n || ds.s[id] != 0) {
      fail(Status::invalid_argument, "ec_subset id is not an EC unit");
    }
  }

  NuisanceBundle b;
  b.e_known = static_cast<double>(rct1.size()) / rct.size();
  b.in_subset.assign(n, 0);
  for (int i : rct) b.in_subset[i] = 1;
  for (int i : ec_subset) b.in_subset[i] = 1;
  b.n_subset_ec = static_cast<int>(ec_subset.size());

  LogisticOptions lopts;
  lopts.allow_degenerate = cfg.allow_degenerate;
  auto fit_on = [&](const std::vector<int>& rows, const Eigen::VectorXd& resp) {
    LogisticFit f = fit_logistic(take_rows(ds.x, rows), resp, nullptr, lopts);
    b.ridge_any = b.ridge_any || f.ridge_used;
    return f;
  };

  if (cfg.fit_propensity) {
    Eigen::VectorXd a_r(static_cast<int>(rct.size()));
    for (std::size_t i = 0; i < rct.size(); ++i) a_r[static_cast<int>(i)] = ds.a[rct[i]];
    b.e = predict_prob(fit_on(rct, a_r), ds.x);
  } else {
    b.e = Eigen::VectorXd::Constant(n, b.e_known);
  }

  b.mu1_r = predict_prob(fit_on(rct1, take_y(ds.y, rct1)), ds.x);
  b.mu0_r = predict_prob(fit_on(rct0, take_y(ds.y, rct0)), ds.x);

  if (ec_subset.empty()) {
    b.rct_only = true;
    b.pi = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
    b.mu0_re = b.mu0_r;
    b.r = Eigen::VectorXd::Ones(n);
    return b;
  }

  std::vector<int> pool = rct;
  pool.insert(pool.end(), ec_subset.begin(), ec_subset.end());
  Eigen::VectorXd s_pool(static_cast<int>(pool.size()));
  for (std::size_t i = 0; i < pool.size(); ++i) s_pool[static_cast<int>(i)] = ds.s[pool[i]];
  b.pi = predict_prob(fit_on(pool, s_pool), ds.x);

  std::vector<int> ctrl_pool = rct0;
  ctrl_pool.insert(ctrl_pool.end(), ec_subset.begin(), ec_subset.end());
  b.mu0_re = predict_prob(fit_on(ctrl_pool, take_y(ds.y, ctrl_pool)), ds.x);

  if (cfg.r_model == NuisanceConfig::RModel::one) {
    b.r = Eigen::VectorXd::Ones(n);
  } else {
    const Eigen::VectorXd m_e = predict_prob(fit_on(ec_subset, take_y(ds.y, ec_subset)), ds.x);
    b.r.resize(n);
    for (int i = 0; i < n; ++i) b.r[i] = variance_ratio_value(b.mu0_r[i], m_e[i]);
  }
  return b;
}

Eigen::VectorXd EntropyBalance::q_at(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd out(x.rows());
  for (int i = 0; i < x.rows(); ++i) {
    double eta = lambda[0];
    for (int j = 0; j < x.cols(); ++j) {
      eta += lambda[j + 1] * (x(i, j) - center[j]) / scale[j];
    }
    out[i] = std::exp(std::clamp(eta, -300.0, 300.0));
  }
  return out;
}

EntropyBalance entropy_balance(const Eigen::MatrixXd& x_ec, const Eigen::MatrixXd& x_rct) {
  const int ne = static_cast<int>(x_ec.rows());
  const int p = static_cast<int>(x_ec.cols());
  if (ne == 0 || x_rct.rows() == 0) fail(Status::invalid_argument, "entropy_balance: empty side");
  if (x_rct.cols() != p) fail(Status::invalid_argument, "entropy_balance: dimension mismatch");

  EntropyBalance eb;
  eb.center = x_ec.colwise().mean();
  eb.scale.resize(p);
  for (int j = 0; j < p; ++j) {
    const double sd = std::sqrt((x_ec.col(j).array() - eb.center[j]).square().mean());
    eb.scale[j] = sd > 0 ? sd : 1.0;
  }

  auto design = [&](const Eigen::MatrixXd& x) {
    Eigen::MatrixXd z(x.rows(), p + 1);
    z.col(0).setOnes();
    for (int j = 0; j < p; ++j) z.col(j + 1) = (x.col(j).array() - eb.center[j]) / eb.scale[j];
    return z;
  };
  const Eigen::MatrixXd ze = design(x_ec);
  const Eigen::VectorXd target = design(x_rct).colwise().sum();

  Eigen::VectorXd lam = Eigen::VectorXd::Zero(p + 1);
  auto q_of = [&](const Eigen::VectorXd& l) {
    Eigen::VectorXd eta = ze * l;
    for (int i = 0; i < ne; ++i) eta[i] = std::exp(std::clamp(eta[i], -300.0, 300.0));
    return eta;
  };
  // dual objective: f(lam) = sum exp(ze lam) - lam' target, convex
  auto dual = [&](const Eigen::VectorXd& l) { return q_of(l).sum() - l.dot(target); };

  for (int iter = 0; iter < 200; ++iter) {
    const Eigen::VectorXd q = q_of(lam);
    const Eigen::VectorXd g = ze.transpose() * q - target;
    Eigen::MatrixXd h = ze.transpose() * q.asDiagonal() * ze;
    h.diagonal().array() += 1e-10;
    Eigen::VectorXd step = h.ldlt().solve(g);
    if (!step.allFinite()) break;
    const double f0 = dual(lam);
    double t = 1.0;
    Eigen::VectorXd cand = lam - step;
    for (int half = 0; half < 40 && dual(cand) >= f0; ++half) {
      t *= 0.5;
      cand = lam - t * step;
    }
    lam = cand;
    if (!lam.allFinite()) break;
    if (step.array().abs().maxCoeff() * t < 1e-12) break;
  }

  if (lam.allFinite()) {
    const Eigen::VectorXd g = ze.transpose() * q_of(lam) - target;
    const double tol = 1e-6 * std::max(1.0, target.array().abs().maxCoeff());
    eb.converged = g.array().abs().maxCoeff() < tol;
    eb.lambda = lam;
  } else {
    eb.lambda = Eigen::VectorXd::Zero(p + 1);
  }
  return eb;
}

}  // namespace hctb
