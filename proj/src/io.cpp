#include "transport/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "transport/basis_dsl.hpp"
#include "transport/errors.hpp"

namespace transport {

using nlohmann::json;

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

double parse_cell(const std::string& cell, std::int64_t row, const std::string& col) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc{} || ptr != cell.data() + cell.size() || !std::isfinite(v))
    throw InputError("non-numeric cell at row " + std::to_string(row) + ", column '" +
                     col + "': '" + cell + "'");
  return v;
}

}  // namespace

SourceDataset load_source_csv(const std::string& path,
                              const std::string& outcome_column) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open source file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw InputError("empty dataset: '" + path + "'");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_csv_line(line);
  if (header.empty()) throw InputError("missing header row in '" + path + "'");

  std::ptrdiff_t outcome_idx = -1;
  std::vector<std::string> var_names;
  for (size_t j = 0; j < header.size(); ++j) {
    if (header[j] == outcome_column)
      outcome_idx = static_cast<std::ptrdiff_t>(j);
    else
      var_names.push_back(header[j]);
  }
  if (outcome_idx < 0)
    throw InputError("missing outcome column '" + outcome_column + "' in '" + path + "'");
  if (var_names.empty()) throw InputError("no covariate columns in '" + path + "'");

  std::vector<double> ybuf;
  std::vector<double> xbuf;  // row-major
  std::int64_t row = 1;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    ++row;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw InputError("row " + std::to_string(row) + " has " +
                       std::to_string(cells.size()) + " cells, expected " +
                       std::to_string(header.size()));
    for (size_t j = 0; j < cells.size(); ++j) {
      const double v = parse_cell(cells[j], row, header[j]);
      if (static_cast<std::ptrdiff_t>(j) == outcome_idx)
        ybuf.push_back(v);
      else
        xbuf.push_back(v);
    }
  }
  const std::int64_t n = static_cast<std::int64_t>(ybuf.size());
  if (n == 0) throw InputError("empty dataset: '" + path + "'");
  const std::int64_t d = static_cast<std::int64_t>(var_names.size());
  Eigen::VectorXd y(n);
  Eigen::MatrixXd x(n, d);
  for (std::int64_t i = 0; i < n; ++i) {
    y(i) = ybuf[static_cast<size_t>(i)];
    for (std::int64_t j = 0; j < d; ++j)
      x(i, j) = xbuf[static_cast<size_t>(i * d + j)];
  }
  return SourceDataset(std::move(y), std::move(x), std::move(var_names));
}

TargetSummary target_summary_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("summary JSON parse error: ") + e.what());
  }
  if (!j.is_object() || !j.contains("m") || !j.contains("terms") || !j.contains("phi"))
    throw InputError("summary JSON must be an object with fields m, terms, phi");
  if (!j["m"].is_number_integer())
    throw InputError("summary field 'm' must be an integer");
  if (!j["terms"].is_array() || !j["phi"].is_array())
    throw InputError("summary fields 'terms' and 'phi' must be arrays");
  if (j["terms"].size() != j["phi"].size())
    throw InputError("summary 'terms' and 'phi' have different lengths");
  std::vector<std::string> labels;
  for (const auto& t : j["terms"]) {
    if (!t.is_string()) throw InputError("summary 'terms' entries must be strings");
    const std::string label = t.get<std::string>();
    parse_single_term(label);  // throws InputError on an unparseable term
    labels.push_back(label);
  }
  Eigen::VectorXd phi(static_cast<Eigen::Index>(j["phi"].size()));
  for (size_t k = 0; k < j["phi"].size(); ++k) {
    if (!j["phi"][k].is_number())
      throw InputError("summary 'phi' entries must be numbers");
    phi(static_cast<Eigen::Index>(k)) = j["phi"][k].get<double>();
  }
  return TargetSummary(std::move(phi), j["m"].get<std::int64_t>(), std::move(labels));
}

TargetSummary load_target_summary_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open summary file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return target_summary_from_json_text(ss.str());
}

namespace {

json diagnostics_to_json(const FitDiagnostics& d) {
  return json{{"iterations", d.iterations}, {"grad_norm", d.grad_norm},
              {"weight_min", d.weight_min}, {"weight_max", d.weight_max},
              {"ess", d.ess},               {"warnings", d.warnings}};
}

}  // namespace

void write_estimate_report_json(const EstimateReport& report, std::ostream& out) {
  const json j{{"estimate", report.estimate},
               {"se", report.se},
               {"ci95", {report.ci95[0], report.ci95[1]}},
               {"n", report.n},
               {"m", report.m},
               {"method", report.method},
               {"diagnostics", diagnostics_to_json(report.diagnostics)}};
  out << j.dump(2) << "\n";
}

EstimateReport read_estimate_report_json(std::istream& in) {
  json j;
  in >> j;
  EstimateReport r;
  r.estimate = j.at("estimate").get<double>();
  r.se = j.at("se").get<double>();
  r.ci95 = {j.at("ci95")[0].get<double>(), j.at("ci95")[1].get<double>()};
  r.n = j.at("n").get<std::int64_t>();
  r.m = j.at("m").get<std::int64_t>();
  r.method = j.at("method").get<std::string>();
  const json& d = j.at("diagnostics");
  r.diagnostics.iterations = d.at("iterations").get<int>();
  r.diagnostics.grad_norm = d.at("grad_norm").get<double>();
  r.diagnostics.weight_min = d.at("weight_min").get<double>();
  r.diagnostics.weight_max = d.at("weight_max").get<double>();
  r.diagnostics.ess = d.at("ess").get<double>();
  r.diagnostics.warnings = d.at("warnings").get<std::vector<std::string>>();
  return r;
}

void write_model_check_json(const ModelCheckResult& result, std::ostream& out) {
  const json j{{"T", result.T}, {"df", result.df}, {"p_value", result.p_value}};
  out << j.dump(2) << "\n";
}

void write_sim_report_csv(const SimReport& report, std::ostream& out) {
  out << "scenario,outcome,n,m,reps,estimator,bias,sd,mean_se,coverage,failed\n";
  for (const EstimatorRow& row : report.rows) {
    out << to_string(report.config.scenario) << ',' << to_string(report.config.outcome)
        << ',' << report.config.n << ',' << report.config.m << ',' << report.config.reps
        << ',' << row.estimator << ',' << format_double(row.bias) << ','
        << format_double(row.sd) << ',' << format_double(row.mean_se) << ','
        << format_double(row.coverage) << ',' << report.reps_failed << "\n";
  }
}

void write_sim_report_json(const SimReport& report, std::ostream& out) {
  json rows = json::array();
  for (const EstimatorRow& row : report.rows)
    rows.push_back(json{{"estimator", row.estimator},
                        {"bias", row.bias},
                        {"sd", row.sd},
                        {"mean_se", row.mean_se},
                        {"coverage", row.coverage}});
  const json j{{"scenario", to_string(report.config.scenario)},
               {"outcome", to_string(report.config.outcome)},
               {"n", report.config.n},
               {"m", report.config.m},
               {"reps", report.config.reps},
               {"seed", report.config.seed},
               {"mu_star_true", report.mu_star_true},
               {"mu_star_oracle_se", report.mu_star_oracle_se},
               {"reps_completed", report.reps_completed},
               {"reps_failed", report.reps_failed},
               {"unstable", report.unstable},
               {"rows", rows}};
  out << j.dump(2) << "\n";
}

}  // namespace transport
