#pragma once

#include <Eigen/Dense>

#include "error.hpp"

namespace hctb {

// Fitted probabilities are clipped to [kProbClip, 1-kProbClip] wherever they
// are evaluated, so they can safely enter denominators.
inline constexpr double kProbClip = 1e-6;

struct LogisticOptions {
  int max_iter = 100;
  double tol = 1e-6;          // max absolute score component
  double ridge_lambda = 1e-4; // slopes only, fallback path
  // Constant response: error by default; when permitted, return the
  // intercept-only fit at the clipped mean instead.
  bool allow_degenerate = false;
};

struct LogisticFit {
  Eigen::VectorXd coef;  // intercept first, then p slopes; expit convention
  bool converged = false;
  int iterations = 0;
  bool ridge_used = false;
  bool degenerate = false;
};

// Weighted Bernoulli MLE by IRLS with step halving. On separation,
// non-convergence, or a singular system, refits with the L2 penalty on slopes.
LogisticFit fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                         const Eigen::VectorXd* weights = nullptr,
                         const LogisticOptions& opts = {});

Eigen::VectorXd predict_prob(const LogisticFit& fit, const Eigen::MatrixXd& x);

inline double clip_prob(double p) {
  if (p < kProbClip) return kProbClip;
  if (p > 1 - kProbClip) return 1 - kProbClip;
  return p;
}

inline double expit(double eta) { return 1.0 / (1.0 + std::exp(-eta)); }

}  // namespace hctb
