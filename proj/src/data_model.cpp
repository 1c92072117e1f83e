#include "transport/types.hpp"

#include <cmath>
#include <set>

#include "transport/basis_dsl.hpp"
#include "transport/errors.hpp"

namespace transport {

SourceDataset::SourceDataset(Eigen::VectorXd y_in, Eigen::MatrixXd x_in,
                             std::vector<std::string> names)
    : y(std::move(y_in)), X(std::move(x_in)), var_names(std::move(names)) {
  if (y.size() < 2) throw InputError("source dataset needs at least two rows");
  if (X.rows() != y.size())
    throw InputError("covariate rows do not match the outcome length");
  if (static_cast<Eigen::Index>(var_names.size()) != X.cols())
    throw InputError("variable name count does not match the covariate columns");
  std::set<std::string> seen;
  for (const std::string& name : var_names)
    if (!seen.insert(name).second)
      throw InputError("duplicate variable name '" + name + "'");
  if (!y.allFinite() || !X.allFinite())
    throw InputError("source dataset contains non-finite values");
}

namespace {

void check_terms(const std::vector<TermExpr>& terms, const char* what) {
  if (terms.empty()) throw InputError(std::string(what) + ": needs at least one term");
  for (size_t i = 0; i < terms.size(); ++i) {
    if (std::holds_alternative<Intercept>(terms[i]))
      throw InputError(std::string(what) + ": the intercept is implicit, drop the '1' term");
    for (size_t j = 0; j < i; ++j)
      if (terms[i] == terms[j])
        throw InputError(std::string(what) + ": duplicate term '" + render_term(terms[i]) + "'");
  }
}

}  // namespace

BasisSpec::BasisSpec(std::vector<TermExpr> terms_in) : terms(std::move(terms_in)) {
  check_terms(terms, "basis");
}

ShiftModel::ShiftModel(std::vector<TermExpr> terms_in) : terms(std::move(terms_in)) {
  check_terms(terms, "shift model");
}

TargetSummary::TargetSummary(Eigen::VectorXd phi, std::int64_t m_in,
                             std::vector<std::string> labels)
    : phi_hat(std::move(phi)), m(m_in), term_labels(std::move(labels)) {
  if (m < 2) throw InputError("target summary needs m >= 2");
  if (phi_hat.size() == 0) throw InputError("target summary is empty");
  if (!phi_hat.allFinite()) throw InputError("target summary contains non-finite moments");
  if (term_labels.size() != static_cast<size_t>(phi_hat.size()))
    throw InputError("target summary labels do not match the moment count");
}

void validate_pairing(const BasisSpec& basis, const TargetSummary& summary) {
  if (basis.K() != summary.K())
    throw InputError("summary/basis mismatch: basis has " + std::to_string(basis.K()) +
                     " terms, summary has " + std::to_string(summary.K()));
  for (int k = 0; k < basis.K(); ++k) {
    const std::string want = render_term(basis.terms[static_cast<size_t>(k)]);
    std::string got;
    try {
      got = render_term(parse_single_term(summary.term_labels[static_cast<size_t>(k)]));
    } catch (const InputError&) {
      got = summary.term_labels[static_cast<size_t>(k)];
    }
    if (got != want)
      throw InputError("summary/basis mismatch at position " + std::to_string(k + 1) +
                       ": basis term '" + want + "' vs summary label '" +
                       summary.term_labels[static_cast<size_t>(k)] + "'");
  }
}

}  // namespace transport
