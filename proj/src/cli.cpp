#include "transport/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>

#include "transport/basis_dsl.hpp"
#include "transport/entropy_balancing.hpp"
#include "transport/errors.hpp"
#include "transport/flexible_reweighting.hpp"
#include "transport/io.hpp"
#include "transport/model_check.hpp"
#include "transport/simulation.hpp"

namespace transport {

namespace {

void write_to(const std::string& path, const std::function<void(std::ostream&)>& emit) {
  if (path.empty()) {
    emit(std::cout);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open output file '" + path + "'");
  emit(out);
}

int resolve_workers(int workers) {
  if (workers > 0) return workers;
  if (const char* env = std::getenv("TRANSPORT_WORKERS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 0;  // OpenMP default
}

std::string json_twin_path(const std::string& csv_path) {
  const size_t dot = csv_path.rfind('.');
  if (dot == std::string::npos || csv_path.find('/', dot) != std::string::npos)
    return csv_path + ".json";
  return csv_path.substr(0, dot) + ".json";
}

void run_estimate(const RunConfig& cfg, bool flexible) {
  const SourceDataset data = load_source_csv(cfg.source_path, cfg.outcome_column);
  const TargetSummary summary = load_target_summary_json(cfg.summary_path);
  if (cfg.basis_spec.empty()) throw InputError("--basis is required");
  const BasisSpec basis(parse_terms(cfg.basis_spec));

  EstimateReport report;
  if (flexible) {
    if (cfg.shift_spec.empty()) throw InputError("--model is required for estimate-flex");
    const ShiftModel model(parse_terms(cfg.shift_spec));
    const FlexFit fit = flex_fit(data, model, basis, summary);
    const double se = std::sqrt(fit.sigma2 / static_cast<double>(data.n()));
    report = make_estimate_report(fit.mu, se, data.n(), summary.m, "flex",
                                  weight_diagnostics(fit.q, fit.report, fit.warnings));
  } else {
    const EBFit fit = eb_fit(data, basis, summary);
    const double se = std::sqrt(fit.sigma2 / static_cast<double>(data.n()));
    report = make_estimate_report(fit.mu, se, data.n(), summary.m, "eb",
                                  weight_diagnostics(fit.p, fit.report, fit.warnings));
  }
  write_to(cfg.output_path,
           [&](std::ostream& out) { write_estimate_report_json(report, out); });
}

void run_check_model(const RunConfig& cfg) {
  const SourceDataset data = load_source_csv(cfg.source_path, cfg.outcome_column);
  const TargetSummary summary = load_target_summary_json(cfg.summary_path);
  if (cfg.basis_spec.empty()) throw InputError("--basis is required");
  if (cfg.shift_spec.empty()) throw InputError("--model is required for check-model");
  const BasisSpec basis(parse_terms(cfg.basis_spec));
  const ShiftModel model(parse_terms(cfg.shift_spec));

  const FlexFit fit = flex_estimate(data, model, basis, summary);
  const ModelCheckResult result = specification_test(fit, data, model, basis, summary);
  for (const std::string& w : result.warnings) std::cerr << "warning: " << w << "\n";
  write_to(cfg.output_path,
           [&](std::ostream& out) { write_model_check_json(result, out); });
}

void run_simulate(const RunConfig& cfg) {
  if (cfg.output_path.empty())
    throw InputError("simulate requires --output (CSV path; a JSON twin is written)");
  SimScenario sc;
  sc.scenario = scenario_from_string(cfg.scenario);
  sc.outcome = outcome_from_string(cfg.outcome_kind);
  sc.n = cfg.n;
  sc.m = cfg.m;
  sc.reps = cfg.reps;
  sc.seed = cfg.seed;
  const BasisSpec basis = cfg.basis_spec.empty() ? default_sim_basis()
                                                 : BasisSpec(parse_terms(cfg.basis_spec));
  const ShiftModel model = cfg.shift_spec.empty()
                               ? default_sim_model(sc.scenario)
                               : ShiftModel(parse_terms(cfg.shift_spec));
  const SimReport report = run_monte_carlo(sc, model, basis, resolve_workers(cfg.workers));
  if (report.unstable)
    std::cerr << "warning: unstable configuration (" << report.reps_failed << " of "
              << report.config.reps << " replications failed)\n";
  write_to(cfg.output_path, [&](std::ostream& out) { write_sim_report_csv(report, out); });
  std::ofstream jout(json_twin_path(cfg.output_path), std::ios::binary);
  if (!jout) throw InputError("cannot open output file '" + json_twin_path(cfg.output_path) + "'");
  write_sim_report_json(report, jout);
}

}  // namespace

int run(const RunConfig& config) {
  try {
    if (config.command == "estimate-eb")
      run_estimate(config, false);
    else if (config.command == "estimate-flex")
      run_estimate(config, true);
    else if (config.command == "check-model")
      run_check_model(config);
    else if (config.command == "simulate")
      run_simulate(config);
    else
      throw InputError("unknown command '" + config.command + "'");
    return 0;
  } catch (const SolverError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 3;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
}

}  // namespace transport
