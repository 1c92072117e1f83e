#pragma once

#include <cstdint>
#include <string>

namespace transport {

struct RunConfig {
  std::string command;  // estimate-eb | estimate-flex | check-model | simulate
  std::string source_path;
  std::string summary_path;
  std::string basis_spec;
  std::string shift_spec;            // estimate-flex / check-model / simulate
  std::string outcome_column = "y";
  std::string output_path;           // empty writes to stdout

  // simulate
  std::string scenario = "i";
  std::string outcome_kind = "continuous";
  std::int64_t n = 500;
  std::int64_t m = 250;
  std::int64_t reps = 1000;
  std::uint64_t seed = 0;
  int workers = 0;  // <= 0: TRANSPORT_WORKERS env var, then the OpenMP default
};

// Executes one command. Returns 0 on success, 2 on input errors, 3 on solver
// failures; errors are printed to stderr with an "error:" prefix.
int run(const RunConfig& config);

}  // namespace transport
