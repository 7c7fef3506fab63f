#include "match.hpp"

#include <cmath>

#include "error.hpp"

namespace hctb {
namespace {

double smd(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  const double mu = u.mean();
  const double mv = v.mean();
  auto var = [](const Eigen::VectorXd& w, double m) {
    if (w.size() < 2) return 0.0;
    return (w.array() - m).square().sum() / (static_cast<double>(w.size()) - 1);
  };
  const double denom = std::sqrt(0.5 * (var(u, mu) + var(v, mv)));
  if (denom < 1e-12) return 0.0;
  return (mu - mv) / denom;
}

}  // namespace

MatchResult match_ecs(const TrialDataset& rct, const TrialDataset& pool,
                      int ratio) {
  if (ratio < 1) fail(Status::invalid_argument, "match: ratio must be >= 1");
  if (rct.p() != pool.p() || rct.covariate_names != pool.covariate_names)
    fail(Status::invalid_argument, "match: covariate schemas differ");
  for (int j = 0; j < pool.n(); ++j)
    if (pool.a[j] != 0)
      fail(Status::validation, "match: pool row " + std::to_string(j) +
                                   " is treated; pools hold controls only");

  MatchResult out;
  std::vector<int> base_rows;
  int dropped = 0;
  for (int i = 0; i < rct.n(); ++i)
    (rct.s[i] == 1 ? void(base_rows.push_back(i)) : void(++dropped));
  if (dropped > 0)
    out.warnings.push_back("match: dropped " + std::to_string(dropped) +
                           " non-RCT rows from the RCT input");
  if (base_rows.empty()) fail(Status::validation, "match: no RCT rows");

  const TrialDataset base = subset_rows(rct, base_rows);
  out.selected_pool_ids = nn_match(base, pool, ratio);

  const int nb = base.n();
  const int ns = static_cast<int>(out.selected_pool_ids.size());
  TrialDataset combined;
  combined.x.resize(nb + ns, base.p());
  combined.y.resize(nb + ns);
  combined.a.resize(nb + ns);
  combined.s.resize(nb + ns);
  combined.x.topRows(nb) = base.x;
  combined.y.head(nb) = base.y;
  combined.a.head(nb) = base.a;
  combined.s.head(nb) = base.s;
  for (int k = 0; k < ns; ++k) {
    const int j = out.selected_pool_ids[static_cast<std::size_t>(k)];
    combined.x.row(nb + k) = pool.x.row(j);
    combined.y[nb + k] = pool.y[j];
    combined.a[nb + k] = 0;
    combined.s[nb + k] = 0;
  }
  combined.covariate_names = base.covariate_names;
  combined.validate();
  out.combined = std::move(combined);

  for (int j = 0; j < base.p(); ++j) {
    Eigen::VectorXd sel(ns);
    for (int k = 0; k < ns; ++k)
      sel[k] = pool.x(out.selected_pool_ids[static_cast<std::size_t>(k)], j);
    BalanceRow row;
    row.covariate = base.covariate_names.empty()
                        ? "x" + std::to_string(j + 1)
                        : base.covariate_names[static_cast<std::size_t>(j)];
    row.smd_pre = smd(base.x.col(j), pool.x.col(j));
    row.smd_post = smd(base.x.col(j), sel);
    out.balance.push_back(row);
  }
  return out;
}

}  // namespace hctb
