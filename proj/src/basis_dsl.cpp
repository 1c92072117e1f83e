#include "transport/basis_dsl.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>

#include "transport/errors.hpp"

namespace transport {

namespace {

struct Cursor {
  std::string_view text;
  size_t pos = 0;

  void skip_ws() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  }
  bool done() {
    skip_ws();
    return pos >= text.size();
  }
  char peek() {
    skip_ws();
    return pos < text.size() ? text[pos] : '\0';
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw InputError("syntax error at offset " + std::to_string(pos) + ": " + what);
  }
};

bool is_name_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
}
bool is_name_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
}

std::string parse_name(Cursor& cur) {
  cur.skip_ws();
  if (cur.pos >= cur.text.size() || !is_name_start(cur.text[cur.pos]))
    cur.fail("expected a variable name");
  const size_t start = cur.pos;
  while (cur.pos < cur.text.size() && is_name_char(cur.text[cur.pos])) ++cur.pos;
  return std::string(cur.text.substr(start, cur.pos - start));
}

int parse_exponent(Cursor& cur) {
  cur.skip_ws();
  const size_t start = cur.pos;
  int k = 0;
  auto [ptr, ec] = std::from_chars(cur.text.data() + cur.pos,
                                   cur.text.data() + cur.text.size(), k);
  if (ec != std::errc{}) cur.fail("expected an integer exponent");
  cur.pos = static_cast<size_t>(ptr - cur.text.data());
  if (k < 2) {
    cur.pos = start;
    cur.fail("exponent must be >= 2 (write the plain variable or omit the term)");
  }
  return k;
}

double parse_number(Cursor& cur) {
  cur.skip_ws();
  const char* begin = cur.text.data() + cur.pos;
  char* end = nullptr;
  const std::string buf(cur.text.substr(cur.pos));  // ensure null termination
  const double v = std::strtod(buf.c_str(), &end);
  if (end == buf.c_str()) cur.fail("expected a number");
  if (!std::isfinite(v)) cur.fail("threshold must be finite");
  cur.pos += static_cast<size_t>(end - buf.c_str());
  (void)begin;
  return v;
}

Rel parse_rel(Cursor& cur) {
  cur.skip_ws();
  const std::string_view rest = cur.text.substr(cur.pos);
  if (rest.starts_with("<=")) { cur.pos += 2; return Rel::le; }
  if (rest.starts_with(">=")) { cur.pos += 2; return Rel::ge; }
  if (rest.starts_with("==")) { cur.pos += 2; return Rel::eq; }
  if (rest.starts_with("<")) { cur.pos += 1; return Rel::lt; }
  if (rest.starts_with(">")) { cur.pos += 1; return Rel::gt; }
  if (rest.starts_with("=")) cur.fail("use '==' for equality");
  cur.fail("expected a comparison (<, <=, >, >=, ==)");
}

TermExpr parse_term(Cursor& cur) {
  cur.skip_ws();
  if (cur.pos >= cur.text.size()) cur.fail("expected a term");
  if (cur.text[cur.pos] == '1') {
    ++cur.pos;
    return Intercept{};
  }
  // Indicator: "I(" must be matched before a plain name starting with I.
  if (cur.text.substr(cur.pos).starts_with("I(")) {
    cur.pos += 2;
    std::string name = parse_name(cur);
    Rel rel = parse_rel(cur);
    double threshold = parse_number(cur);
    cur.skip_ws();
    if (cur.pos >= cur.text.size() || cur.text[cur.pos] != ')')
      cur.fail("expected ')'");
    ++cur.pos;
    return Indicator{std::move(name), rel, threshold};
  }
  std::string name = parse_name(cur);
  cur.skip_ws();
  if (cur.pos < cur.text.size() && cur.text[cur.pos] == '^') {
    ++cur.pos;
    const size_t exp_pos = cur.pos;
    int k = 0;
    auto [ptr, ec] = std::from_chars(cur.text.data() + cur.pos,
                                     cur.text.data() + cur.text.size(), k);
    if (ec != std::errc{}) cur.fail("expected an integer exponent");
    cur.pos = static_cast<size_t>(ptr - cur.text.data());
    if (k < 2) {
      cur.pos = exp_pos;
      cur.fail("exponent must be >= 2 (write the plain variable or omit the term)");
    }
    return Power{std::move(name), k};
  }
  if (cur.pos < cur.text.size() && cur.text[cur.pos] == ':') {
    ++cur.pos;
    std::string other = parse_name(cur);
    if (other == name) cur.fail("interaction of a variable with itself (write name^2)");
    if (other < name) std::swap(name, other);
    return Interaction{std::move(name), std::move(other)};
  }
  return Var{std::move(name)};
}

std::string format_shortest(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

std::vector<TermExpr> parse_terms(std::string_view spec) {
  Cursor cur{spec};
  if (cur.done()) throw InputError("syntax error at offset 0: empty term list");
  std::vector<TermExpr> terms;
  while (true) {
    TermExpr term = parse_term(cur);
    for (const TermExpr& seen : terms)
      if (seen == term)
        throw InputError("duplicate term '" + render_term(term) + "'");
    terms.push_back(std::move(term));
    if (cur.done()) break;
    if (cur.peek() != '+') cur.fail("expected '+' between terms");
    ++cur.pos;
    if (cur.done()) cur.fail("expected a term after '+'");
  }
  return terms;
}

TermExpr parse_single_term(std::string_view text) {
  Cursor cur{text};
  TermExpr term = parse_term(cur);
  if (!cur.done()) cur.fail("unexpected trailing input");
  return term;
}

std::string render_term(const TermExpr& term) {
  struct Renderer {
    std::string operator()(const Var& t) const { return t.name; }
    std::string operator()(const Power& t) const {
      return t.name + "^" + std::to_string(t.exponent);
    }
    std::string operator()(const Interaction& t) const { return t.a + ":" + t.b; }
    std::string operator()(const Indicator& t) const {
      const char* rel = nullptr;
      switch (t.rel) {
        case Rel::lt: rel = "<"; break;
        case Rel::le: rel = "<="; break;
        case Rel::gt: rel = ">"; break;
        case Rel::ge: rel = ">="; break;
        case Rel::eq: rel = "=="; break;
      }
      return "I(" + t.name + " " + rel + " " + format_shortest(t.threshold) + ")";
    }
    std::string operator()(const Intercept&) const { return "1"; }
  };
  return std::visit(Renderer{}, term);
}

std::string render_terms(const std::vector<TermExpr>& terms) {
  std::string out;
  for (size_t i = 0; i < terms.size(); ++i) {
    if (i) out += " + ";
    out += render_term(terms[i]);
  }
  return out;
}

namespace {

Eigen::Index column_of(const std::vector<std::string>& names, const std::string& name) {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw InputError("unknown variable '" + name + "'");
  return static_cast<Eigen::Index>(it - names.begin());
}

bool indicator_holds(double x, Rel rel, double threshold) {
  switch (rel) {
    case Rel::lt: return x < threshold;
    case Rel::le: return x <= threshold;
    case Rel::gt: return x > threshold;
    case Rel::ge: return x >= threshold;
    case Rel::eq: return x == threshold;
  }
  return false;
}

double int_pow(double x, int k) {
  double acc = 1.0;
  for (int i = 0; i < k; ++i) acc *= x;
  return acc;
}

}  // namespace

Eigen::MatrixXd evaluate_terms(const std::vector<TermExpr>& terms,
                               const Eigen::Ref<const Eigen::MatrixXd>& X,
                               const std::vector<std::string>& var_names) {
  const Eigen::Index n = X.rows();
  Eigen::MatrixXd out(n, static_cast<Eigen::Index>(terms.size()));
  for (size_t j = 0; j < terms.size(); ++j) {
    const Eigen::Index col = static_cast<Eigen::Index>(j);
    std::visit(
        [&](const auto& t) {
          using T = std::decay_t<decltype(t)>;
          if constexpr (std::is_same_v<T, Var>) {
            out.col(col) = X.col(column_of(var_names, t.name));
          } else if constexpr (std::is_same_v<T, Power>) {
            const Eigen::Index c = column_of(var_names, t.name);
#pragma omp parallel for schedule(static)
            for (Eigen::Index i = 0; i < n; ++i) out(i, col) = int_pow(X(i, c), t.exponent);
          } else if constexpr (std::is_same_v<T, Interaction>) {
            const Eigen::Index ca = column_of(var_names, t.a);
            const Eigen::Index cb = column_of(var_names, t.b);
#pragma omp parallel for schedule(static)
            for (Eigen::Index i = 0; i < n; ++i) out(i, col) = X(i, ca) * X(i, cb);
          } else if constexpr (std::is_same_v<T, Indicator>) {
            const Eigen::Index c = column_of(var_names, t.name);
#pragma omp parallel for schedule(static)
            for (Eigen::Index i = 0; i < n; ++i)
              out(i, col) = indicator_holds(X(i, c), t.rel, t.threshold) ? 1.0 : 0.0;
          } else {
            out.col(col).setOnes();
          }
        },
        terms[j]);
    for (Eigen::Index i = 0; i < n; ++i)
      if (!std::isfinite(out(i, col)))
        throw InputError("non-finite basis value in term '" + render_term(terms[j]) +
                         "' at row " + std::to_string(i));
  }
  return out;
}

Eigen::MatrixXd evaluate_basis(const std::vector<TermExpr>& terms,
                               const SourceDataset& data) {
  return evaluate_terms(terms, data.X, data.var_names);
}

Eigen::MatrixXd evaluate_basis(const BasisSpec& basis, const SourceDataset& data) {
  return evaluate_terms(basis.terms, data.X, data.var_names);
}

}  // namespace transport
