#pragma once

#include <iosfwd>
#include <string>

#include "transport/simulation.hpp"
#include "transport/types.hpp"

namespace transport {

// Shortest round-trip decimal rendering.
std::string format_double(double v);

// UTF-8 CSV with a header row; the outcome column is selected by name and
// every remaining column becomes a covariate. Parse errors name the row and
// column.
SourceDataset load_source_csv(const std::string& path,
                              const std::string& outcome_column);

// JSON object {"m": int, "terms": [canonical term strings], "phi": [numbers]}.
TargetSummary load_target_summary_json(const std::string& path);
TargetSummary target_summary_from_json_text(const std::string& text);

void write_estimate_report_json(const EstimateReport& report, std::ostream& out);
EstimateReport read_estimate_report_json(std::istream& in);

void write_model_check_json(const ModelCheckResult& result, std::ostream& out);

// CSV columns: scenario,outcome,n,m,reps,estimator,bias,sd,mean_se,coverage,failed
void write_sim_report_csv(const SimReport& report, std::ostream& out);
void write_sim_report_json(const SimReport& report, std::ostream& out);

}  // namespace transport
