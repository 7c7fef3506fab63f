#include "logistic.hpp"

#include <cmath>

namespace hctb {

namespace {

double penalized_loglik(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                        const Eigen::VectorXd& w, const Eigen::VectorXd& beta, double lambda) {
  const Eigen::VectorXd eta = z * beta;
  double ll = 0;
  for (int i = 0; i < y.size(); ++i) {
    const double p = clip_prob(expit(eta[i]));
    ll += w[i] * (y[i] * std::log(p) + (1 - y[i]) * std::log(1 - p));
  }
  if (lambda > 0) ll -= 0.5 * lambda * beta.tail(beta.size() - 1).squaredNorm();
  return ll;
}

// Returns true on convergence; fills beta and iterations.
bool irls(const Eigen::MatrixXd& z, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
          double lambda, const LogisticOptions& opts, Eigen::VectorXd& beta, int& iterations) {
  const int k = static_cast<int>(z.cols());
  beta.setZero(k);
  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(k, lambda);
  penalty[0] = 0;

  for (iterations = 1; iterations <= opts.max_iter; ++iterations) {
    const Eigen::VectorXd eta = z * beta;
    Eigen::VectorXd p(eta.size()), irls_w(eta.size());
    for (int i = 0; i < eta.size(); ++i) {
      p[i] = expit(eta[i]);
      irls_w[i] = std::max(w[i] * p[i] * (1 - p[i]), 1e-12);
    }
    const Eigen::VectorXd score =
        z.transpose() * (w.array() * (y - p).array()).matrix() - penalty.asDiagonal() * beta;
    if (score.array().abs().maxCoeff() < opts.tol) return true;

    Eigen::MatrixXd h = z.transpose() * irls_w.asDiagonal() * z;
    h += penalty.asDiagonal();
    Eigen::VectorXd step = h.ldlt().solve(score);
    if (!step.allFinite()) return false;

    const double ll0 = penalized_loglik(z, y, w, beta, lambda);
    double t = 1.0;
    Eigen::VectorXd cand = beta + step;
    for (int half = 0; half < 40 && penalized_loglik(z, y, w, cand, lambda) < ll0; ++half) {
      t *= 0.5;
      cand = beta + t * step;
    }
    beta = cand;
    if (!beta.allFinite() || beta.array().abs().maxCoeff() > 100) return false;
  }
  return false;
}

}  // namespace

LogisticFit fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                         const Eigen::VectorXd* weights, const LogisticOptions& opts) {
  const int n = static_cast<int>(y.size());
  if (n == 0) fail(Status::invalid_argument, "fit_logistic: no observations");
  if (x.rows() != n) fail(Status::invalid_argument, "fit_logistic: x/y size mismatch");
  Eigen::VectorXd w = weights ? *weights : Eigen::VectorXd::Ones(n);
  if (w.size() != n || (w.array() < 0).any()) {
    fail(Status::invalid_argument, "fit_logistic: bad weights");
  }

  double wsum = 0, wy = 0;
  for (int i = 0; i < n; ++i) {
    if (y[i] != 0.0 && y[i] != 1.0) fail(Status::invalid_argument, "fit_logistic: y must be 0/1");
    wsum += w[i];
    wy += w[i] * y[i];
  }
  if (wsum <= 0) fail(Status::invalid_argument, "fit_logistic: zero total weight");

  LogisticFit fit;
  const int k = static_cast<int>(x.cols()) + 1;
  const double ybar = wy / wsum;
  if (ybar == 0.0 || ybar == 1.0) {
    if (!opts.allow_degenerate) fail(Status::numeric, "degenerate response");
    const double p = clip_prob(ybar);
    fit.coef = Eigen::VectorXd::Zero(k);
    fit.coef[0] = std::log(p / (1 - p));
    fit.converged = true;
    fit.degenerate = true;
    return fit;
  }

  Eigen::MatrixXd z(n, k);
  z.col(0).setOnes();
  z.rightCols(k - 1) = x;

  Eigen::VectorXd beta;
  int iters = 0;
  // Coefficients past ~12 mean fitted probabilities pinned at 0/1, i.e.
  // (quasi-)separation: the score can dip under tol at a spurious finite point.
  if (irls(z, y, w, 0.0, opts, beta, iters) && beta.array().abs().maxCoeff() <= 12) {
    fit.coef = beta;
    fit.converged = true;
    fit.iterations = iters;
    return fit;
  }
  fit.ridge_used = true;
  fit.converged = irls(z, y, w, opts.ridge_lambda, opts, beta, fit.iterations);
  if (!beta.allFinite()) fail(Status::numeric, "fit_logistic: ridge fallback failed");
  fit.coef = beta;
  return fit;
}

Eigen::VectorXd predict_prob(const LogisticFit& fit, const Eigen::MatrixXd& x) {
  if (x.cols() + 1 != fit.coef.size()) {
    fail(Status::invalid_argument, "predict_prob: dimension mismatch");
  }
  Eigen::VectorXd eta =
      (x * fit.coef.tail(fit.coef.size() - 1)).array() + fit.coef[0];
  for (int i = 0; i < eta.size(); ++i) eta[i] = clip_prob(expit(eta[i]));
  return eta;
}

}  // namespace hctb
