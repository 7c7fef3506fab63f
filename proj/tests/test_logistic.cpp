#include <cmath>
#include <vector>

#include "doctest.h"
#include "logistic.hpp"
#include "rng.hpp"

using namespace hctb;

namespace {

// Independent oracle: iteratively zoomed 2-D grid search on the exact
// Bernoulli negative log-likelihood.
Eigen::Vector2d grid_oracle(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  auto nll = [&](double b0, double b1) {
    double s = 0;
    for (int i = 0; i < y.size(); ++i) {
      const double p = clip_prob(expit(b0 + b1 * x[i]));
      s -= y[i] * std::log(p) + (1 - y[i]) * std::log(1 - p);
    }
    return s;
  };
  double c0 = 0, c1 = 0, half = 8;
  for (int round = 0; round < 28; ++round) {
    double best = std::numeric_limits<double>::infinity(), b0 = c0, b1 = c1;
    for (int i = -10; i <= 10; ++i) {
      for (int j = -10; j <= 10; ++j) {
        const double v = nll(c0 + half * i / 10.0, c1 + half * j / 10.0);
        if (v < best) {
          best = v;
          b0 = c0 + half * i / 10.0;
          b1 = c1 + half * j / 10.0;
        }
      }
    }
    c0 = b0;
    c1 = b1;
    half *= 0.2;
  }
  return {c0, c1};
}

}  // namespace

TEST_CASE("intercept-only fit recovers the class mean") {
  Eigen::MatrixXd x(4, 0);

  Eigen::VectorXd balanced(4);
  balanced << 0, 1, 0, 1;
  auto f = fit_logistic(x, balanced);
  CHECK(std::abs(f.coef[0]) < 1e-6);
  CHECK(predict_prob(f, x)[0] == doctest::Approx(0.5));

  Eigen::VectorXd skewed(4);
  skewed << 1, 1, 1, 0;
  auto g = fit_logistic(x, skewed);
  // +log 3 here; equals linear predictor -log 3 in the 1/(1+exp(eta)) convention
  CHECK(g.coef[0] == doctest::Approx(std::log(3.0)).epsilon(1e-6));
  CHECK(predict_prob(g, x)[0] == doctest::Approx(0.75).epsilon(1e-6));
}

TEST_CASE("constant response errors unless explicitly permitted") {
  Eigen::MatrixXd x(3, 1);
  x << 0.1, -0.2, 0.5;
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(3);
  CHECK_THROWS_WITH_AS(fit_logistic(x, ones), doctest::Contains("degenerate response"), Error);

  LogisticOptions opts;
  opts.allow_degenerate = true;
  auto f = fit_logistic(x, ones, nullptr, opts);
  CHECK(f.degenerate);
  CHECK(predict_prob(f, x)[0] == doctest::Approx(1 - kProbClip));
  CHECK(f.coef[1] == 0);

  Eigen::VectorXd zeros = Eigen::VectorXd::Zero(3);
  auto g = fit_logistic(x, zeros, nullptr, opts);
  CHECK(predict_prob(g, x)[0] == doctest::Approx(kProbClip));
}

TEST_CASE("matches the grid oracle on two-parameter problems") {
  Rng rng(31);
  for (int rep = 0; rep < 20; ++rep) {
    const int n = 200;
    Eigen::MatrixXd x(n, 1);
    Eigen::VectorXd y(n);
    const double b0 = rng.uniform(-1, 1), b1 = rng.uniform(-2, 2);
    for (int i = 0; i < n; ++i) {
      x(i, 0) = rng.uniform(-2, 2);
      y[i] = rng.bernoulli(expit(b0 + b1 * x(i, 0)));
    }
    if (y.sum() == 0 || y.sum() == n) continue;
    auto f = fit_logistic(x, y);
    REQUIRE(f.converged);
    CHECK_FALSE(f.ridge_used);
    auto oracle = grid_oracle(x.col(0), y);
    CHECK(std::abs(f.coef[0] - oracle[0]) < 1e-4);
    CHECK(std::abs(f.coef[1] - oracle[1]) < 1e-4);

    // score equations at the unpenalized optimum
    const Eigen::VectorXd p = predict_prob(f, x);
    CHECK(std::abs((y - p).sum()) < 1e-6);
    CHECK(std::abs(x.col(0).dot(y - p)) < 1e-6);
  }
}

TEST_CASE("integer weights equal row duplication") {
  Rng rng(7);
  const int n = 50;
  Eigen::MatrixXd x(n, 2);
  Eigen::VectorXd y(n), w(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = rng.uniform(-1, 1);
    x(i, 1) = rng.uniform(-1, 1);
    y[i] = rng.bernoulli(0.5);
    w[i] = 1 + rng.uniform_int(3);
  }
  const int total = static_cast<int>(w.sum());
  Eigen::MatrixXd xd(total, 2);
  Eigen::VectorXd yd(total);
  int k = 0;
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < static_cast<int>(w[i]); ++c) {
      xd.row(k) = x.row(i);
      yd[k] = y[i];
      ++k;
    }
  }
  auto fw = fit_logistic(x, y, &w);
  auto fd = fit_logistic(xd, yd);
  for (int j = 0; j < 3; ++j) CHECK(fw.coef[j] == doctest::Approx(fd.coef[j]).epsilon(1e-5));
}

TEST_CASE("separated data falls back to ridge with finite monotone fit") {
  Eigen::MatrixXd x(4, 1);
  x << -2, -1, 1, 2;
  Eigen::VectorXd y(4);
  y << 0, 0, 1, 1;
  auto f = fit_logistic(x, y);
  CHECK(f.ridge_used);
  CHECK(f.converged);
  CHECK(f.coef.allFinite());
  const Eigen::VectorXd p = predict_prob(f, x);
  CHECK(p[0] < p[3]);
  for (int i = 0; i < 4; ++i) {
    CHECK(p[i] >= kProbClip);
    CHECK(p[i] <= 1 - kProbClip);
  }
}

TEST_CASE("collinear columns still give well-defined predictions") {
  Rng rng(13);
  const int n = 80;
  Eigen::MatrixXd x1(n, 1);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    x1(i, 0) = rng.uniform(-2, 2);
    y[i] = rng.bernoulli(expit(0.3 + 0.8 * x1(i, 0)));
  }
  Eigen::MatrixXd x2(n, 2);
  x2.col(0) = x1.col(0);
  x2.col(1) = x1.col(0);
  auto f1 = fit_logistic(x1, y);
  auto f2 = fit_logistic(x2, y);
  const Eigen::VectorXd p1 = predict_prob(f1, x1);
  const Eigen::VectorXd p2 = predict_prob(f2, x2);
  for (int i = 0; i < n; ++i) CHECK(p2[i] == doctest::Approx(p1[i]).epsilon(1e-3));
}
