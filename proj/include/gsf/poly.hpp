#pragma once

// Sparse multivariate polynomials over named variables, plus the graded-lex
// monomial bookkeeping used by the Gram/SOS machinery.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace gsf::poly {

using Exponents = std::vector<int>;

inline long long binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  long long r = 1;
  for (int i = 0; i < k; ++i) r = r * (n - i) / (i + 1);
  return r;
}

/// Graded lexicographic order: lower total degree first, ties broken
/// lexicographically (earlier variable with higher power sorts first).
inline bool grlex_less(const Exponents& a, const Exponents& b) {
  int da = 0, db = 0;
  for (int e : a) da += e;
  for (int e : b) db += e;
  if (da != db) return da < db;
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return a[i] > b[i];
  return false;
}

class Polynomial {
 public:
  Polynomial() = default;

  static Polynomial constant(double c) {
    Polynomial p;
    if (c != 0.0) p.terms_[{}] = c;
    return p;
  }

  static Polynomial variable(const std::string& name) {
    Polynomial p;
    p.vars_ = {name};
    p.terms_[{1}] = 1.0;
    return p;
  }

  const std::vector<std::string>& variables() const { return vars_; }
  const std::map<Exponents, double>& terms() const { return terms_; }
  bool is_zero() const { return terms_.empty(); }

  int degree() const {
    int d = 0;
    for (const auto& [e, c] : terms_) {
      int t = 0;
      for (int x : e) t += x;
      d = std::max(d, t);
    }
    return d;
  }

  double constant_term() const {
    for (const auto& [e, c] : terms_) {
      bool all0 = true;
      for (int x : e) all0 &= (x == 0);
      if (all0) return c;
    }
    return 0.0;
  }

  /// Coefficient of the monomial given by per-variable exponents (variables
  /// not listed are taken as power zero).
  double coeff(const std::map<std::string, int>& mono) const {
    Exponents key(vars_.size(), 0);
    for (const auto& [n, e] : mono) {
      auto it = std::find(vars_.begin(), vars_.end(), n);
      if (it == vars_.end()) {
        if (e != 0) return 0.0;
        continue;
      }
      key[it - vars_.begin()] = e;
    }
    auto it = terms_.find(key);
    return it == terms_.end() ? 0.0 : it->second;
  }

  double evaluate(const std::map<std::string, double>& point) const {
    std::vector<double> x(vars_.size());
    std::vector<bool> needed(vars_.size(), false);
    for (const auto& [e, c] : terms_)
      for (size_t i = 0; i < e.size(); ++i)
        if (e[i] != 0) needed[i] = true;
    for (size_t i = 0; i < vars_.size(); ++i) {
      auto it = point.find(vars_[i]);
      if (it == point.end()) {
        if (needed[i])
          throw std::invalid_argument("evaluate: missing value for variable '" +
                                      vars_[i] + "'");
        x[i] = 0.0;
      } else {
        x[i] = it->second;
      }
    }
    double s = 0.0;
    for (const auto& [e, c] : terms_) {
      double m = c;
      for (size_t i = 0; i < e.size(); ++i)
        for (int k = 0; k < e[i]; ++k) m *= x[i];
      s += m;
    }
    return s;
  }

  Polynomial derivative(const std::string& var) const {
    auto it = std::find(vars_.begin(), vars_.end(), var);
    Polynomial out;
    out.vars_ = vars_;
    if (it == vars_.end()) return out;  // zero
    size_t k = it - vars_.begin();
    for (const auto& [e, c] : terms_) {
      if (e[k] == 0) continue;
      Exponents d = e;
      d[k] -= 1;
      out.terms_[d] += c * e[k];
    }
    out.normalize();
    out.compact();
    return out;
  }

  /// Components ordered as variables().
  std::vector<Polynomial> gradient() const {
    std::vector<Polynomial> g;
    g.reserve(vars_.size());
    for (const auto& v : vars_) g.push_back(derivative(v));
    return g;
  }

  Polynomial operator-() const {
    Polynomial p = *this;
    for (auto& [e, c] : p.terms_) c = -c;
    return p;
  }

  friend Polynomial operator+(const Polynomial& a, const Polynomial& b) {
    auto [pa, pb] = aligned(a, b);
    for (const auto& [e, c] : pb.terms_) pa.terms_[e] += c;
    pa.normalize();
    pa.compact();
    return pa;
  }
  friend Polynomial operator-(const Polynomial& a, const Polynomial& b) {
    return a + (-b);
  }
  friend Polynomial operator*(const Polynomial& a, const Polynomial& b) {
    auto [pa, pb] = aligned(a, b);
    Polynomial out;
    out.vars_ = pa.vars_;
    for (const auto& [ea, ca] : pa.terms_)
      for (const auto& [eb, cb] : pb.terms_) {
        Exponents e = ea;
        for (size_t i = 0; i < e.size(); ++i) e[i] += eb[i];
        out.terms_[e] += ca * cb;
      }
    out.normalize();
    out.compact();
    return out;
  }
  friend Polynomial operator*(double s, const Polynomial& p) {
    Polynomial out = p;
    for (auto& [e, c] : out.terms_) c *= s;
    out.normalize();
    out.compact();
    return out;
  }
  friend Polynomial operator*(const Polynomial& p, double s) { return s * p; }
  friend Polynomial operator+(const Polynomial& p, double s) {
    return p + constant(s);
  }
  friend Polynomial operator-(const Polynomial& p, double s) {
    return p + constant(-s);
  }
  friend Polynomial operator+(double s, const Polynomial& p) {
    return p + constant(s);
  }
  friend Polynomial operator-(double s, const Polynomial& p) {
    return constant(s) - p;
  }
  Polynomial& operator+=(double s) { return *this = *this + s; }
  Polynomial& operator-=(double s) { return *this = *this - s; }
  Polynomial& operator+=(const Polynomial& o) { return *this = *this + o; }
  Polynomial& operator-=(const Polynomial& o) { return *this = *this - o; }
  Polynomial& operator*=(const Polynomial& o) { return *this = *this * o; }

  Polynomial pow(int e) const {
    if (e < 0) throw std::invalid_argument("pow: negative exponent");
    Polynomial r = constant(1.0);
    for (int i = 0; i < e; ++i) r = r * *this;
    return r;
  }

  /// Substitute var <- q and expand.
  Polynomial substitute(const std::string& var, const Polynomial& q) const {
    auto it = std::find(vars_.begin(), vars_.end(), var);
    if (it == vars_.end()) return *this;
    size_t k = it - vars_.begin();
    Polynomial out;
    for (const auto& [e, c] : terms_) {
      Polynomial rest;
      rest.vars_ = vars_;
      Exponents er = e;
      er[k] = 0;
      rest.terms_[er] = c;
      rest.normalize();
      out += rest * q.pow(e[k]);
    }
    return out;
  }

  /// compose-linear-shift: var <- var + x0.
  Polynomial shift(const std::string& var, double x0) const {
    return substitute(var, variable(var) + constant(x0));
  }

  /// Rename a variable (target name must not already occur).
  Polynomial rename(const std::string& from, const std::string& to) const {
    return substitute(from, variable(to));
  }

  /// Drop terms with |coeff| <= tol (explicit cleanup, not part of the
  /// arithmetic ops).
  Polynomial pruned(double tol) const {
    Polynomial out;
    out.vars_ = vars_;
    for (const auto& [e, c] : terms_)
      if (std::abs(c) > tol) out.terms_[e] = c;
    out.compact();
    return out;
  }

  double max_abs_coeff() const {
    double m = 0.0;
    for (const auto& [e, c] : terms_) m = std::max(m, std::abs(c));
    return m;
  }

  std::string to_string() const;
  static Polynomial parse(const std::string& text);

  /// Build from an explicit variable list and term map; exponent vectors must
  /// match the variable list length.
  static Polynomial from_terms(std::vector<std::string> vars,
                               std::map<Exponents, double> terms) {
    Polynomial p;
    std::vector<size_t> order(vars.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return vars[a] < vars[b]; });
    p.vars_.resize(vars.size());
    for (size_t i = 0; i < order.size(); ++i) p.vars_[i] = vars[order[i]];
    for (const auto& [e, c] : terms) {
      if (e.size() != vars.size())
        throw std::invalid_argument("from_terms: exponent length mismatch");
      Exponents r(e.size());
      for (size_t i = 0; i < e.size(); ++i) r[i] = e[order[i]];
      p.terms_[r] += c;
    }
    p.normalize();
    return p;
  }

 private:
  // vars_ kept sorted ascending; exponent vectors aligned with vars_.
  std::vector<std::string> vars_;
  std::map<Exponents, double> terms_;

  void normalize() {
    for (auto it = terms_.begin(); it != terms_.end();)
      it = (it->second == 0.0) ? terms_.erase(it) : std::next(it);
  }

  // Drop variable names no term uses; stale names would inflate every
  // downstream monomial basis built from variables(). Not part of
  // normalize(): aligned() relies on both operands keeping a shared order.
  void compact() {
    std::vector<bool> used(vars_.size(), false);
    for (const auto& [e, c] : terms_)
      for (size_t i = 0; i < e.size(); ++i)
        if (e[i] > 0) used[i] = true;
    if (std::find(used.begin(), used.end(), false) == used.end()) return;
    std::vector<std::string> kept;
    std::vector<size_t> pos;
    for (size_t i = 0; i < vars_.size(); ++i)
      if (used[i]) {
        pos.push_back(i);
        kept.push_back(vars_[i]);
      }
    std::map<Exponents, double> terms;
    for (const auto& [e, c] : terms_) {
      Exponents r(pos.size());
      for (size_t i = 0; i < pos.size(); ++i) r[i] = e[pos[i]];
      terms[r] += c;
    }
    vars_ = std::move(kept);
    terms_ = std::move(terms);
  }

  Polynomial remapped(const std::vector<std::string>& target) const {
    Polynomial out;
    out.vars_ = target;
    std::vector<int> pos(vars_.size());
    for (size_t i = 0; i < vars_.size(); ++i) {
      auto it = std::find(target.begin(), target.end(), vars_[i]);
      pos[i] = int(it - target.begin());
    }
    for (const auto& [e, c] : terms_) {
      Exponents r(target.size(), 0);
      for (size_t i = 0; i < e.size(); ++i) r[pos[i]] = e[i];
      out.terms_[r] += c;
    }
    out.normalize();
    return out;
  }

  static std::pair<Polynomial, Polynomial> aligned(const Polynomial& a,
                                                   const Polynomial& b) {
    if (a.vars_ == b.vars_) return {a, b};
    std::vector<std::string> u = a.vars_;
    u.insert(u.end(), b.vars_.begin(), b.vars_.end());
    std::sort(u.begin(), u.end());
    u.erase(std::unique(u.begin(), u.end()), u.end());
    return {a.remapped(u), b.remapped(u)};
  }
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string Polynomial::to_string() const {
  if (terms_.empty()) return "0";
  // graded-lex descending for readability
  std::vector<const std::pair<const Exponents, double>*> order;
  for (const auto& t : terms_) order.push_back(&t);
  std::sort(order.begin(), order.end(),
            [](auto* a, auto* b) { return grlex_less(b->first, a->first); });
  std::string out;
  bool first = true;
  for (auto* t : order) {
    double c = t->second;
    if (first) {
      if (c < 0) out += "-";
      first = false;
    } else {
      out += (c < 0) ? " - " : " + ";
    }
    out += format_double(std::abs(c));
    for (size_t i = 0; i < t->first.size(); ++i) {
      int e = t->first[i];
      if (e == 0) continue;
      out += "*" + vars_[i];
      if (e > 1) out += "^" + std::to_string(e);
    }
  }
  return out;
}

inline Polynomial Polynomial::parse(const std::string& text) {
  size_t i = 0;
  auto skip = [&] { while (i < text.size() && std::isspace((unsigned char)text[i])) ++i; };
  Polynomial result;
  skip();
  if (i == text.size()) throw std::invalid_argument("parse: empty input");
  while (i < text.size()) {
    double sign = 1.0;
    skip();
    if (text[i] == '+' || text[i] == '-') {
      if (text[i] == '-') sign = -1.0;
      ++i;
      skip();
    }
    // term: [number] ('*'? var ('^' int)?)*
    double coeff = 1.0;
    bool have_any = false;
    if (i < text.size() && (std::isdigit((unsigned char)text[i]) || text[i] == '.')) {
      size_t end;
      coeff = std::stod(text.substr(i), &end);
      i += end;
      have_any = true;
    }
    Polynomial term = Polynomial::constant(sign * coeff);
    for (;;) {
      skip();
      if (i < text.size() && text[i] == '*') {
        ++i;
        skip();
      }
      if (i >= text.size() || !(std::isalpha((unsigned char)text[i]) || text[i] == '_'))
        break;
      size_t start = i;
      while (i < text.size() &&
             (std::isalnum((unsigned char)text[i]) || text[i] == '_'))
        ++i;
      std::string name = text.substr(start, i - start);
      int exp = 1;
      skip();
      if (i < text.size() && text[i] == '^') {
        ++i;
        skip();
        size_t end;
        exp = std::stoi(text.substr(i), &end);
        i += end;
      }
      term *= Polynomial::variable(name).pow(exp);
      have_any = true;
    }
    if (!have_any) throw std::invalid_argument("parse: malformed term in '" + text + "'");
    result += term;
    skip();
    if (i < text.size() && text[i] != '+' && text[i] != '-')
      throw std::invalid_argument("parse: unexpected character '" +
                                  std::string(1, text[i]) + "'");
  }
  return result;
}

/// Truncated Taylor series of sin/cos about `center`, in the deviation
/// variable `var` (i.e. the returned p satisfies p(d) ~ sin(center + d)).
enum class TrigKind { Sin, Cos };

inline Polynomial taylor_trig(TrigKind kind, double center, int degree,
                              const std::string& var = "x") {
  if (degree < 1) throw std::invalid_argument("taylor_trig: degree must be >= 1");
  Polynomial x = Polynomial::variable(var);
  Polynomial out;
  double fact = 1.0;
  for (int k = 0; k <= degree; ++k) {
    if (k > 0) fact *= k;
    // k-th derivative of sin at center cycles sin, cos, -sin, -cos
    double base = (kind == TrigKind::Sin)
                      ? (k % 4 == 0   ? std::sin(center)
                         : k % 4 == 1 ? std::cos(center)
                         : k % 4 == 2 ? -std::sin(center)
                                      : -std::cos(center))
                      : (k % 4 == 0   ? std::cos(center)
                         : k % 4 == 1 ? -std::sin(center)
                         : k % 4 == 2 ? -std::cos(center)
                                      : std::sin(center));
    out += (base / fact) * x.pow(k);
  }
  return out;
}

/// All exponent vectors over n variables with total degree <= d, in graded
/// lexicographic order. Size is C(n+d, d).
struct MonomialBasis {
  std::vector<Exponents> monomials;

  static MonomialBasis up_to_degree(int nvars, int d) {
    MonomialBasis b;
    Exponents cur(nvars, 0);
    gen(b.monomials, cur, 0, d);
    std::sort(b.monomials.begin(), b.monomials.end(), grlex_less);
    return b;
  }
  size_t size() const { return monomials.size(); }

 private:
  static void gen(std::vector<Exponents>& out, Exponents& cur, int var,
                  int budget) {
    if (var == (int)cur.size()) {
      out.push_back(cur);
      return;
    }
    for (int e = 0; e <= budget; ++e) {
      cur[var] = e;
      gen(out, cur, var + 1, budget - e);
    }
    cur[var] = 0;
  }
};

/// Polynomial bound to a fixed variable ordering for fast repeated
/// evaluation; missing variables must not occur in the polynomial.
class Evaluator {
 public:
  Evaluator() = default;
  Evaluator(const Polynomial& p, const std::vector<std::string>& order) {
    const auto& pv = p.variables();
    std::vector<int> pos(pv.size(), -1);
    for (size_t i = 0; i < pv.size(); ++i) {
      auto it = std::find(order.begin(), order.end(), pv[i]);
      if (it != order.end()) pos[i] = int(it - order.begin());
    }
    nvars_ = order.size();
    for (const auto& [e, c] : p.terms()) {
      Term t;
      t.coeff = c;
      for (size_t i = 0; i < e.size(); ++i) {
        if (e[i] == 0) continue;
        if (pos[i] < 0)
          throw std::invalid_argument("Evaluator: variable '" + pv[i] +
                                      "' not in binding order");
        t.exps.emplace_back(pos[i], e[i]);
      }
      terms_.push_back(std::move(t));
    }
  }

  double operator()(const double* x) const {
    double s = 0.0;
    for (const auto& t : terms_) {
      double m = t.coeff;
      for (const auto& [idx, e] : t.exps) {
        double v = x[idx];
        for (int k = 0; k < e; ++k) m *= v;
      }
      s += m;
    }
    return s;
  }
  double operator()(const std::vector<double>& x) const { return (*this)(x.data()); }

 private:
  struct Term {
    double coeff;
    std::vector<std::pair<int, int>> exps;
  };
  std::vector<Term> terms_;
  size_t nvars_ = 0;
};

}  // namespace gsf::poly
