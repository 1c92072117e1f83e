#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "transport/types.hpp"

namespace transport {

enum class Scenario { i, ii, iii, iv };
enum class OutcomeKind { continuous, binary };

std::string to_string(Scenario s);
std::string to_string(OutcomeKind k);
Scenario scenario_from_string(const std::string& s);
OutcomeKind outcome_from_string(const std::string& s);

struct SimScenario {
  Scenario scenario = Scenario::i;
  OutcomeKind outcome = OutcomeKind::continuous;
  std::int64_t n = 500;
  std::int64_t m = 250;
  std::int64_t reps = 1000;
  std::uint64_t seed = 0;
};

// Random stream for one replication: mt19937_64 keyed by a mix of the run
// seed and the replication index, uniforms from the top 53 bits, normals by
// cached Box-Muller. Draw sequences depend only on the key, never on which
// thread runs the replication.
class UnitRng {
 public:
  explicit UnitRng(std::uint64_t key);
  double uniform();  // in (0,1)
  double normal();

 private:
  std::mt19937_64 gen_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

std::uint64_t mix_seed(std::uint64_t key);
UnitRng replication_rng(std::uint64_t seed, std::int64_t rep);

// Pr(delta = 1 | x) for a scenario, and E(Y | x) shared by both outcomes.
double membership_probability(Scenario scenario, double x1, double x2, double x3);
double outcome_conditional_mean(double x1, double x2, double x3);

struct SuperpopUnit {
  double x1, x2, x3;
  double y;
  bool in_target;  // delta = 1
};

SuperpopUnit draw_superpop_unit(UnitRng& rng, Scenario scenario, OutcomeKind outcome);

struct Study {
  SourceDataset source;       // n rows with outcome
  Eigen::MatrixXd target_x;   // m x 3 covariates only
};

// Draws superpopulation units until both quotas are filled; excess units of
// a filled stratum are discarded.
Study gen_study(const SimScenario& sc, UnitRng& rng);

struct OracleValue {
  double mu = 0.0;
  double se = 0.0;
};

// E(Y | delta = 1) from a dedicated-seed superpopulation draw with the
// binary covariates, membership, and outcome noise integrated out
// analytically; cached per (scenario, outcome).
OracleValue true_mu_star(Scenario scenario, OutcomeKind outcome);
// Uncached primitive with caller-chosen seed and draw count.
OracleValue mu_star_oracle(Scenario scenario, OutcomeKind outcome,
                           std::uint64_t seed, std::int64_t draws);

BasisSpec default_sim_basis();
ShiftModel default_sim_model(Scenario scenario);

struct RepEstimate {
  double mu = 0.0;
  double se = 0.0;
};

struct ReplicationResult {
  RepEstimate naive, eb, flex;
  bool ok = false;
  std::string error;
};

ReplicationResult run_replication(const SimScenario& sc, std::int64_t rep,
                                  const ShiftModel& model, const BasisSpec& basis);

struct EstimatorRow {
  std::string estimator;  // naive | eb | flex
  double bias = 0.0;
  double sd = 0.0;
  double mean_se = 0.0;
  double coverage = 0.0;  // fraction in [0,1]
};

struct SimReport {
  SimScenario config;
  double mu_star_true = 0.0;
  double mu_star_oracle_se = 0.0;
  std::vector<EstimatorRow> rows;
  std::int64_t reps_completed = 0;
  std::int64_t reps_failed = 0;
  bool unstable = false;  // more than 5% failed replications
};

// Replications run in parallel up to `workers` threads (<= 0 means the OpenMP
// default); aggregation is ordered by replication index, so the report is
// identical for any worker count.
SimReport run_monte_carlo(const SimScenario& sc, const ShiftModel& model,
                          const BasisSpec& basis, int workers = 0);

}  // namespace transport
