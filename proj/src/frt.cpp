#include "frt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "error.hpp"
#include "threading.hpp"

namespace hctb {

namespace {

constexpr std::uint64_t kFrtStatStream = 0x57a7;
// Permutation streams sit far above every small stream-id constant so a
// replicate index can never alias an internal stream of the same master seed.
constexpr std::uint64_t kFrtPermBase = 0x100000000ull;
constexpr double kInf = std::numeric_limits<double>::infinity();

void check_spec(const FrtSpec& spec) {
  const auto& names = method_names();
  if (std::find(names.begin(), names.end(), spec.method) == names.end())
    fail(Status::invalid_argument, "frt: unknown method: " + spec.method);
}

bool is_csb(const FrtSpec& spec) { return spec.method.rfind("csb-", 0) == 0; }

// The statistic must be one fixed function of (assignment, data): every
// internal draw is seeded by stat_seed, identical across permutations.
double statistic_value(const TrialDataset& ds, const FrtSpec& spec,
                       std::uint64_t stat_seed, double gamma_frozen) {
  MethodOptions opt;
  opt.gamma = spec.gamma;
  opt.adaptive = spec.adaptive;
  opt.conformal = spec.conformal;
  opt.conformal.seed = stat_seed;
  opt.nuisance = spec.nuisance;
  opt.nuisance.allow_degenerate = true;
  opt.threads = 1;
  if (!std::isnan(gamma_frozen)) {
    opt.adaptive = false;
    opt.gamma = gamma_frozen;
  }
  double point = fit_method(ds, spec.method, spec.estimand, opt).effect.point;
  return spec.estimand == Estimand::rd ? std::abs(point)
                                       : std::abs(std::log(point));
}

std::uint64_t derive_stat_seed(std::uint64_t seed) {
  return Rng::stream(seed, kFrtStatStream).next_u64();
}

// NaN means the statistic manages gamma itself; a finite value freezes the
// observed adaptive threshold (refit_policy = fixed_gamma).
double gamma_frozen_for(const TrialDataset& ds, const FrtSpec& spec,
                        std::uint64_t stat_seed) {
  if (spec.refit != FrtSpec::Refit::fixed_gamma || !spec.adaptive ||
      !is_csb(spec))
    return std::numeric_limits<double>::quiet_NaN();
  ConformalConfig cfg = spec.conformal;
  cfg.score = parse_score(spec.method.substr(4));
  cfg.seed = stat_seed;
  NuisanceConfig loose = spec.nuisance;
  loose.allow_degenerate = true;
  return adaptive_gamma(ds, cfg, loose, 1).gamma_hat;
}

}  // namespace

Eigen::VectorXi permute_assignment(const TrialDataset& ds, Rng& rng) {
  std::vector<int> rct;
  rct.reserve(ds.n_rct());
  for (int i = 0; i < ds.n(); ++i)
    if (ds.s[i] == 1) rct.push_back(i);
  std::vector<int> arm(rct.size(), 0);
  std::fill(arm.begin(), arm.begin() + ds.n_treated(), 1);
  rng.shuffle(arm);
  Eigen::VectorXi a = Eigen::VectorXi::Zero(ds.n());
  for (std::size_t j = 0; j < rct.size(); ++j) a[rct[j]] = arm[j];
  return a;
}

double frt_p_count(const std::vector<double>& replicate_stats, double observed) {
  int count = 0;
  for (double t : replicate_stats) count += t >= observed;
  return (count + 1.0) / (replicate_stats.size() + 1.0);
}

double frt_statistic(const TrialDataset& ds, const FrtSpec& spec) {
  check_spec(spec);
  return statistic_value(ds, spec, derive_stat_seed(spec.seed),
                         std::numeric_limits<double>::quiet_NaN());
}

FrtResult frt_pvalue(const TrialDataset& ds, const FrtSpec& spec) {
  check_spec(spec);
  if (spec.reps < 1) fail(Status::invalid_argument, "frt: reps must be >= 1");
  const auto t_start = std::chrono::steady_clock::now();
  const std::uint64_t stat_seed = derive_stat_seed(spec.seed);
  const double gamma_frozen = gamma_frozen_for(ds, spec, stat_seed);

  FrtResult res;
  res.approximate = !std::isnan(gamma_frozen);
  res.observed_stat = statistic_value(ds, spec, stat_seed, gamma_frozen);
  if (std::isnan(res.observed_stat))
    fail(Status::numeric, "frt: observed statistic is undefined");

  const int reps = spec.reps;
  std::vector<double> stats(reps);
  std::vector<char> failed(reps, 0);
  ThreadPool pool(resolve_threads(spec.threads));
  pool.parallel_for(static_cast<std::size_t>(reps), [&](std::size_t b) {
    Rng rng = Rng::stream(spec.seed, kFrtPermBase + b);
    TrialDataset dsb = ds;
    dsb.a = permute_assignment(ds, rng);
    double t;
    try {
      t = statistic_value(dsb, spec, stat_seed, gamma_frozen);
    } catch (const std::exception&) {
      t = kInf;
      failed[b] = 1;
    }
    if (std::isnan(t)) {
      t = kInf;
      failed[b] = 1;
    }
    stats[b] = t;
  });
  res.replicate_stats = std::move(stats);
  res.failures = static_cast<int>(
      std::count(failed.begin(), failed.end(), static_cast<char>(1)));
  res.p = frt_p_count(res.replicate_stats, res.observed_stat);
  res.runtime_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return res;
}

double frt_exact(const TrialDataset& ds, const FrtSpec& spec) {
  check_spec(spec);
  const int nr = ds.n_rct(), n1 = ds.n_treated();
  double comb = 1;
  for (int i = 1; i <= n1; ++i) {
    comb = comb * (nr - n1 + i) / i;
    if (comb > 1e6 + 0.5)
      fail(Status::invalid_argument,
           "frt_exact: C(n_R, n1) exceeds the 1e6 assignment budget");
  }
  const std::uint64_t stat_seed = derive_stat_seed(spec.seed);
  const double gamma_frozen = gamma_frozen_for(ds, spec, stat_seed);
  const double t_obs = statistic_value(ds, spec, stat_seed, gamma_frozen);
  if (std::isnan(t_obs))
    fail(Status::numeric, "frt_exact: observed statistic is undefined");

  std::vector<int> rct;
  rct.reserve(nr);
  for (int i = 0; i < ds.n(); ++i)
    if (ds.s[i] == 1) rct.push_back(i);
  std::vector<char> mask(nr, 0);
  std::fill(mask.begin(), mask.begin() + n1, 1);
  std::vector<std::vector<char>> masks;
  masks.reserve(static_cast<std::size_t>(std::llround(comb)));
  do {
    masks.push_back(mask);
  } while (std::prev_permutation(mask.begin(), mask.end()));

  std::vector<double> stats(masks.size());
  ThreadPool pool(resolve_threads(spec.threads));
  pool.parallel_for(masks.size(), [&](std::size_t k) {
    TrialDataset dsb = ds;
    for (int j = 0; j < nr; ++j) dsb.a[rct[j]] = masks[k][j];
    double t;
    try {
      t = statistic_value(dsb, spec, stat_seed, gamma_frozen);
    } catch (const std::exception&) {
      t = kInf;
    }
    stats[k] = std::isnan(t) ? kInf : t;
  });
  std::size_t count = 0;
  for (double t : stats) count += t >= t_obs;
  return static_cast<double>(count) / static_cast<double>(masks.size());
}

}  // namespace hctb
