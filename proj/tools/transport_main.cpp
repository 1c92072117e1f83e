#include <CLI11.hpp>

#include "transport/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Transport outcome-mean estimates to a target population known "
               "through covariate summary statistics"};
  app.require_subcommand(1);
  transport::RunConfig cfg;

  auto add_estimation_flags = [&](CLI::App* cmd, bool with_model) {
    cmd->add_option("--source", cfg.source_path, "source CSV (header row required)")
        ->required();
    cmd->add_option("--summary", cfg.summary_path, "target summary JSON")->required();
    cmd->add_option("--basis", cfg.basis_spec, "basis terms, e.g. \"x1 + x2 + x1^2\"")
        ->required();
    if (with_model)
      cmd->add_option("--model", cfg.shift_spec,
                      "covariate shift model terms, e.g. \"x1 + x2\"")
          ->required();
    cmd->add_option("--outcome", cfg.outcome_column, "outcome column name (default y)");
    cmd->add_option("--output", cfg.output_path, "output JSON path (default stdout)");
  };

  CLI::App* eb = app.add_subcommand("estimate-eb", "entropy balancing estimate");
  add_estimation_flags(eb, false);
  CLI::App* flex = app.add_subcommand("estimate-flex", "model-based reweighting estimate");
  add_estimation_flags(flex, true);
  CLI::App* check = app.add_subcommand("check-model", "covariate shift model check");
  add_estimation_flags(check, true);

  CLI::App* sim = app.add_subcommand("simulate", "Monte Carlo study");
  sim->add_option("--scenario", cfg.scenario, "i | ii | iii | iv")->required();
  sim->add_option("--outcome", cfg.outcome_kind, "continuous | binary")->required();
  sim->add_option("--n", cfg.n, "source sample size")->required();
  sim->add_option("--m", cfg.m, "target sample size")->required();
  sim->add_option("--reps", cfg.reps, "replications")->required();
  sim->add_option("--seed", cfg.seed, "random seed");
  sim->add_option("--workers", cfg.workers,
                  "parallel replications (default: TRANSPORT_WORKERS, then all cores)");
  sim->add_option("--basis", cfg.basis_spec, "basis terms (default x1 + x2 + x3 + x1^2)");
  sim->add_option("--model", cfg.shift_spec, "shift model terms (default per scenario)");
  sim->add_option("--output", cfg.output_path, "output CSV path (JSON twin alongside)")
      ->required();

  CLI11_PARSE(app, argc, argv);
  cfg.command = app.get_subcommands().front()->get_name();
  return transport::run(cfg);
}
