#pragma once

#include <Eigen/Dense>
#include <string>
#include <string_view>
#include <vector>

#include "transport/types.hpp"

// Concrete syntax for basis and shift-model terms.
//
//   terms  := term ('+' term)*
//   term   := name | name '^' k | name ':' name | 'I(' name rel value ')' | '1'
//   rel    := '<' | '<=' | '>' | '>=' | '=='
//
// with k an integer >= 2, whitespace insignificant, interactions normalized
// to lexicographic order, and '1' the intercept (rejected by BasisSpec and
// ShiftModel, whose intercepts are implicit).

namespace transport {

// Parses a '+'-separated term list. Throws InputError with the byte offset of
// the first syntax error, or on a duplicate normalized term.
std::vector<TermExpr> parse_terms(std::string_view spec);

// Parses exactly one term (used for summary labels).
TermExpr parse_single_term(std::string_view text);

// Canonical rendering: "name", "name^k", "a:b", "I(name REL value)" with the
// value in shortest round-trip decimal, "1" for the intercept.
std::string render_term(const TermExpr& term);
std::string render_terms(const std::vector<TermExpr>& terms);

// Evaluates terms column by column against named covariate data. Indicator
// columns are exactly 0/1. Throws InputError on an unknown variable or on a
// non-finite evaluated value (naming the row).
Eigen::MatrixXd evaluate_terms(const std::vector<TermExpr>& terms,
                               const Eigen::Ref<const Eigen::MatrixXd>& X,
                               const std::vector<std::string>& var_names);

Eigen::MatrixXd evaluate_basis(const std::vector<TermExpr>& terms,
                               const SourceDataset& data);
Eigen::MatrixXd evaluate_basis(const BasisSpec& basis, const SourceDataset& data);

}  // namespace transport
