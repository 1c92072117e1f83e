#include "transport/simulation.hpp"

#include <cmath>
#include <map>
#include <mutex>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "transport/basis_dsl.hpp"
#include "transport/entropy_balancing.hpp"
#include "transport/errors.hpp"
#include "transport/flexible_reweighting.hpp"
#include "transport/numerics.hpp"

namespace transport {

namespace {

constexpr std::uint64_t kOracleSeed = 0x0dd5eed0f0a11eceULL;

double expit(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double membership_logit(Scenario sc, double x1, double x2, double x3) {
  switch (sc) {
    case Scenario::i:
      return 0.2 * x1 + 0.2 * x2 + 0.2 * x3 + 0.2 * x1 * x1;
    case Scenario::ii:
      return 0.4 * x1;
    case Scenario::iii:
      return 0.2 * x1 + 0.2 * x2 - 0.3 * x1 * x2;
    case Scenario::iv:
      return 0.2 * x1 + 0.2 * x2 - 0.4 * x1 * x2;
  }
  return 0.0;
}

double outcome_mean(double x1, double x2, double x3) {
  return x1 + x2 + x3 - 4.0 * x1 * x2 - 2.0;
}

int scenario_index(Scenario s) { return static_cast<int>(s); }

}  // namespace

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::i: return "i";
    case Scenario::ii: return "ii";
    case Scenario::iii: return "iii";
    case Scenario::iv: return "iv";
  }
  return "?";
}

std::string to_string(OutcomeKind k) {
  return k == OutcomeKind::continuous ? "continuous" : "binary";
}

Scenario scenario_from_string(const std::string& s) {
  if (s == "i") return Scenario::i;
  if (s == "ii") return Scenario::ii;
  if (s == "iii") return Scenario::iii;
  if (s == "iv") return Scenario::iv;
  throw InputError("unknown scenario '" + s + "' (use i, ii, iii, iv)");
}

OutcomeKind outcome_from_string(const std::string& s) {
  if (s == "continuous") return OutcomeKind::continuous;
  if (s == "binary") return OutcomeKind::binary;
  throw InputError("unknown outcome kind '" + s + "' (use continuous or binary)");
}

std::uint64_t mix_seed(std::uint64_t key) {
  // splitmix64 finalizer
  key += 0x9e3779b97f4a7c15ULL;
  key = (key ^ (key >> 30)) * 0xbf58476d1ce4e5b9ULL;
  key = (key ^ (key >> 27)) * 0x94d049bb133111ebULL;
  return key ^ (key >> 31);
}

UnitRng::UnitRng(std::uint64_t key) : gen_(key) {}

double UnitRng::uniform() {
  return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53;
}

double UnitRng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 6.283185307179586477 * u2;
  cached_ = r * std::sin(a);
  has_cached_ = true;
  return r * std::cos(a);
}

UnitRng replication_rng(std::uint64_t seed, std::int64_t rep) {
  return UnitRng(mix_seed(seed ^ static_cast<std::uint64_t>(rep)));
}

SuperpopUnit draw_superpop_unit(UnitRng& rng, Scenario scenario, OutcomeKind outcome) {
  SuperpopUnit u;
  u.x1 = rng.normal();
  u.x2 = rng.uniform() < expit(-2.0 * u.x1) ? 1.0 : 0.0;
  u.x3 = rng.uniform() < expit(u.x1) ? 1.0 : 0.0;
  const double g = outcome_mean(u.x1, u.x2, u.x3);
  if (outcome == OutcomeKind::continuous)
    u.y = g + rng.normal();
  else
    u.y = rng.uniform() < expit(g) ? 1.0 : 0.0;
  u.in_target = rng.uniform() < expit(membership_logit(scenario, u.x1, u.x2, u.x3));
  return u;
}

Study gen_study(const SimScenario& sc, UnitRng& rng) {
  const std::int64_t n = sc.n;
  const std::int64_t m = sc.m;
  Eigen::VectorXd y(n);
  Eigen::MatrixXd xs(n, 3);
  Eigen::MatrixXd xt(m, 3);
  std::int64_t filled_src = 0, filled_tgt = 0;
  while (filled_src < n || filled_tgt < m) {
    const SuperpopUnit u = draw_superpop_unit(rng, sc.scenario, sc.outcome);
    if (u.in_target) {
      if (filled_tgt < m) {
        xt(filled_tgt, 0) = u.x1;
        xt(filled_tgt, 1) = u.x2;
        xt(filled_tgt, 2) = u.x3;
        ++filled_tgt;
      }
    } else if (filled_src < n) {
      xs(filled_src, 0) = u.x1;
      xs(filled_src, 1) = u.x2;
      xs(filled_src, 2) = u.x3;
      y(filled_src) = u.y;
      ++filled_src;
    }
  }
  return Study{SourceDataset(std::move(y), std::move(xs), {"x1", "x2", "x3"}),
               std::move(xt)};
}

OracleValue mu_star_oracle(Scenario scenario, OutcomeKind outcome,
                           std::uint64_t seed, std::int64_t draws) {
  // One x1 draw per unit; x2, x3, membership, and outcome noise are summed
  // out exactly, so each unit contributes a = E[Delta ybar | x1] and
  // b = E[Delta | x1]. mu = E[a]/E[b] with a delta-method standard error.
  const std::int64_t chunk = 1 << 20;
  const std::int64_t nchunks = (draws + chunk - 1) / chunk;
  std::vector<std::array<double, 5>> partial(static_cast<size_t>(nchunks));

#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < nchunks; ++c) {
    UnitRng rng(mix_seed(seed ^ static_cast<std::uint64_t>(c)));
    const std::int64_t lo = c * chunk;
    const std::int64_t hi = std::min(lo + chunk, draws);
    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
    for (std::int64_t i = lo; i < hi; ++i) {
      const double x1 = rng.normal();
      const double p2 = expit(-2.0 * x1);
      const double p3 = expit(x1);
      double a = 0.0, b = 0.0;
      for (int x2 = 0; x2 <= 1; ++x2) {
        for (int x3 = 0; x3 <= 1; ++x3) {
          const double pr = (x2 ? p2 : 1.0 - p2) * (x3 ? p3 : 1.0 - p3);
          const double delta = expit(membership_logit(scenario, x1, x2, x3));
          const double g = outcome_mean(x1, x2, x3);
          const double ybar = outcome == OutcomeKind::continuous ? g : expit(g);
          a += pr * delta * ybar;
          b += pr * delta;
        }
      }
      sa += a;
      sb += b;
      saa += a * a;
      sbb += b * b;
      sab += a * b;
    }
    partial[static_cast<size_t>(c)] = {sa, sb, saa, sbb, sab};
  }
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (const auto& p : partial) {
    sa += p[0];
    sb += p[1];
    saa += p[2];
    sbb += p[3];
    sab += p[4];
  }
  const double nn = static_cast<double>(draws);
  const double am = sa / nn, bm = sb / nn;
  OracleValue v;
  v.mu = am / bm;
  const double va = saa / nn - am * am;
  const double vb = sbb / nn - bm * bm;
  const double cab = sab / nn - am * bm;
  v.se = std::sqrt((va - 2.0 * v.mu * cab + v.mu * v.mu * vb) / (bm * bm) / nn);
  return v;
}

OracleValue true_mu_star(Scenario scenario, OutcomeKind outcome) {
  static std::map<std::pair<int, int>, OracleValue> cache;
  static std::mutex mutex;
  const std::pair<int, int> key{scenario_index(scenario), static_cast<int>(outcome)};
  {
    std::lock_guard<std::mutex> lock(mutex);
    const auto it = cache.find(key);
    if (it != cache.end()) return it->second;
  }
  // 1e8 draws keep the oracle error around 2e-4 for the continuous outcome
  const OracleValue v = mu_star_oracle(
      scenario, outcome, kOracleSeed ^ static_cast<std::uint64_t>(scenario_index(scenario)),
      100'000'000);
  std::lock_guard<std::mutex> lock(mutex);
  cache[key] = v;
  return v;
}

BasisSpec default_sim_basis() { return BasisSpec(parse_terms("x1 + x2 + x3 + x1^2")); }

ShiftModel default_sim_model(Scenario scenario) {
  switch (scenario) {
    case Scenario::i: return ShiftModel(parse_terms("x1 + x2 + x3 + x1^2"));
    case Scenario::ii: return ShiftModel(parse_terms("x1"));
    case Scenario::iii:
    case Scenario::iv: return ShiftModel(parse_terms("x1 + x2 + x1:x2"));
  }
  throw InputError("unknown scenario");
}

ReplicationResult run_replication(const SimScenario& sc, std::int64_t rep,
                                  const ShiftModel& model, const BasisSpec& basis) {
  ReplicationResult res;
  try {
    UnitRng rng = replication_rng(sc.seed, rep);
    const Study study = gen_study(sc, rng);

    const Eigen::MatrixXd bt =
        evaluate_terms(basis.terms, study.target_x, {"x1", "x2", "x3"});
    Eigen::VectorXd phi_hat = bt.colwise().mean();
    std::vector<std::string> labels;
    labels.reserve(basis.terms.size());
    for (const TermExpr& t : basis.terms) labels.push_back(render_term(t));
    const TargetSummary summary(std::move(phi_hat), sc.m, std::move(labels));

    const Eigen::VectorXd& y = study.source.y;
    const double nn = static_cast<double>(sc.n);
    res.naive.mu = y.mean();
    res.naive.se = std::sqrt((y.array() - res.naive.mu).square().sum() / (nn - 1.0) / nn);

    EBFit eb = eb_estimate(study.source, basis, summary);
    const EBVariance ebv = eb_variance(eb, study.source, basis, summary);
    res.eb.mu = eb.mu;
    res.eb.se = ebv.se;

    const FlexFit flex = flex_fit(study.source, model, basis, summary);
    res.flex.mu = flex.mu;
    res.flex.se = std::sqrt(flex.sigma2 / nn);

    res.ok = true;
  } catch (const std::exception& err) {
    res.ok = false;
    res.error = err.what();
  }
  return res;
}

SimReport run_monte_carlo(const SimScenario& sc, const ShiftModel& model,
                          const BasisSpec& basis, int workers) {
  if (sc.reps < 2) throw InputError("run_monte_carlo needs reps >= 2");
  SimReport report;
  report.config = sc;
  const OracleValue oracle = true_mu_star(sc.scenario, sc.outcome);
  report.mu_star_true = oracle.mu;
  report.mu_star_oracle_se = oracle.se;

  std::vector<ReplicationResult> results(static_cast<size_t>(sc.reps));
#ifdef _OPENMP
  const int nthreads = workers > 0 ? workers : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(nthreads)
#endif
  for (std::int64_t r = 0; r < sc.reps; ++r)
    results[static_cast<size_t>(r)] = run_replication(sc, r, model, basis);

  const double z = normal_quantile(0.975);
  const char* names[3] = {"naive", "eb", "flex"};
  for (int which = 0; which < 3; ++which) {
    double sum_mu = 0.0, sum_se = 0.0;
    std::int64_t count = 0, covered = 0;
    for (const ReplicationResult& r : results) {
      if (!r.ok) continue;
      const RepEstimate& e =
          which == 0 ? r.naive : (which == 1 ? r.eb : r.flex);
      sum_mu += e.mu;
      sum_se += e.se;
      if (std::abs(e.mu - oracle.mu) <= z * e.se) ++covered;
      ++count;
    }
    EstimatorRow row;
    row.estimator = names[which];
    if (count > 1) {
      const double mean_mu = sum_mu / static_cast<double>(count);
      double ss = 0.0;
      for (const ReplicationResult& r : results) {
        if (!r.ok) continue;
        const RepEstimate& e =
            which == 0 ? r.naive : (which == 1 ? r.eb : r.flex);
        ss += (e.mu - mean_mu) * (e.mu - mean_mu);
      }
      row.bias = mean_mu - oracle.mu;
      row.sd = std::sqrt(ss / static_cast<double>(count - 1));
      row.mean_se = sum_se / static_cast<double>(count);
      row.coverage = static_cast<double>(covered) / static_cast<double>(count);
    }
    report.rows.push_back(std::move(row));
  }
  report.reps_failed = 0;
  for (const ReplicationResult& r : results)
    if (!r.ok) ++report.reps_failed;
  report.reps_completed = sc.reps - report.reps_failed;
  report.unstable =
      static_cast<double>(report.reps_failed) > 0.05 * static_cast<double>(sc.reps);
  return report;
}

}  // namespace transport
