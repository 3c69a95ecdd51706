#pragma once

// Positivity certificates on semialgebraic sets via Putinar's
// Positivstellensatz, reduced to SDP feasibility, plus the coordinate-ascent
// alternation used for template synthesis. The feasibility margin throughout
// is the eigenvalue shift t in "residual Gram >= t I" (generator multipliers
// stay SOS); a nonnegative margin means the certificate exists.

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gsf/poly.hpp"
#include "gsf/sdp.hpp"

namespace gsf::sos {

using poly::Exponents;
using poly::MonomialBasis;
using poly::Polynomial;

inline int even_up(int d) { return d + (d % 2); }

struct SemialgebraicSet {
  std::vector<Polynomial> inequalities;  // k_j(x) >= 0
  std::vector<Polynomial> equalities;    // e(x) = 0

  static SemialgebraicSet whole_space() { return {}; }
  bool is_whole() const { return inequalities.empty() && equalities.empty(); }

  SemialgebraicSet intersect(const SemialgebraicSet& o) const {
    SemialgebraicSet r = *this;
    r.inequalities.insert(r.inequalities.end(), o.inequalities.begin(),
                          o.inequalities.end());
    r.equalities.insert(r.equalities.end(), o.equalities.begin(),
                        o.equalities.end());
    return r;
  }
};

struct PutinarCertificate {
  Polynomial sigma0;
  std::vector<Polynomial> sigma;   // one per inequality generator
  std::vector<Polynomial> lambda;  // one per equality generator (free sign)
  int multiplier_degree = 0;
  double margin = 0.0;            // eigenvalue margin of the Gram blocks
  double gram_min_eig = 0.0;
  double reconstruction_error = 0.0;
};

enum class ProveOutcome { Found, NotFound, SolverFailure };

struct ProveResult {
  ProveOutcome outcome = ProveOutcome::SolverFailure;
  std::optional<PutinarCertificate> cert;
  double margin = 0.0;
  std::string diagnostic;
};

struct SosOptions {
  sdp::SdpOptions sdp;
  double found_margin_tol = 1e-6;  // margin >= -tol counts as found
  double trace_cap = 0.0;          // 0 => automatic
};

namespace detail {

/// Affine polynomial expression in SDP scalar variables: for each monomial a
/// constant part plus a linear form over variable indices.
struct LinPoly {
  struct Mono {
    double constant = 0.0;
    std::vector<std::pair<int, double>> lin;
  };
  std::map<Exponents, Mono> monos;
};

/// Builds an SDP out of "expr - sum sigma_j k_j - sum lambda_e e = sigma_0"
/// conditions with every sigma certified by a PSD Gram block.
class Encoder {
 public:
  sdp::SdpProblem prob;

  struct GramInfo {
    int sdp_block;
    std::vector<std::string> vars;
    MonomialBasis basis;
    std::vector<int> entry_var;  // upper-triangle row-major (b <= g)
  };

  int add_scalar() { return prob.add_variable(); }

  int add_gram(const std::vector<std::string>& vars, int half_degree) {
    GramInfo gi;
    gi.vars = vars;
    gi.basis = MonomialBasis::up_to_degree(int(vars.size()), half_degree);
    const int n = int(gi.basis.size());
    gi.sdp_block = prob.add_block(n);
    for (int b = 0; b < n; ++b)
      for (int g = b; g < n; ++g) {
        int v = prob.add_variable();
        prob.add_entry(v, gi.sdp_block, b, g, 1.0);
        gi.entry_var.push_back(v);
        if (b == g) diag_vars_.push_back(v);
      }
    grams_.push_back(std::move(gi));
    return int(grams_.size()) - 1;
  }

  const GramInfo& gram(int i) const { return grams_[i]; }

  /// Gram contribution of m(x) m(x)^T entries to a LinPoly, optionally
  /// multiplied by a fixed polynomial `weight`, with sign `sgn`.
  void accumulate_gram(LinPoly& acc, int gram_id, const Polynomial& weight,
                       double sgn, const std::vector<std::string>& cond_vars) {
    const GramInfo& gi = grams_[gram_id];
    std::vector<int> pos = var_positions(gi.vars, cond_vars);
    auto w = remap(weight, cond_vars);
    const int n = int(gi.basis.size());
    int idx = 0;
    for (int b = 0; b < n; ++b)
      for (int g = b; g < n; ++g, ++idx) {
        double mult = (b == g) ? 1.0 : 2.0;
        Exponents bg(cond_vars.size(), 0);
        for (size_t k = 0; k < gi.vars.size(); ++k)
          bg[pos[k]] = gi.basis.monomials[b][k] + gi.basis.monomials[g][k];
        for (const auto& [we, wc] : w) {
          Exponents a = bg;
          for (size_t k = 0; k < a.size(); ++k) a[k] += we[k];
          acc.monos[a].lin.emplace_back(gi.entry_var[idx], sgn * mult * wc);
        }
      }
  }

  void accumulate_fixed(LinPoly& acc, const Polynomial& p, double sgn,
                        const std::vector<std::string>& cond_vars) {
    for (const auto& [e, c] : remap(p, cond_vars))
      acc.monos[e].constant += sgn * c;
  }

  void accumulate_scalar(LinPoly& acc, int var, const Polynomial& p, double sgn,
                         const std::vector<std::string>& cond_vars) {
    for (const auto& [e, c] : remap(p, cond_vars))
      acc.monos[e].lin.emplace_back(var, sgn * c);
  }

  /// Free polynomial multiplier (for equality generators): fresh scalar per
  /// basis monomial; returns the coefficient variable ids.
  std::vector<int> accumulate_free_poly(LinPoly& acc, const Polynomial& gen,
                                        int degree, double sgn,
                                        const std::vector<std::string>& cond_vars,
                                        MonomialBasis* basis_out) {
    MonomialBasis basis =
        MonomialBasis::up_to_degree(int(cond_vars.size()), degree);
    std::vector<int> ids;
    auto g = remap(gen, cond_vars);
    for (const auto& m : basis.monomials) {
      int v = add_scalar();
      ids.push_back(v);
      for (const auto& [ge, gc] : g) {
        Exponents a = m;
        for (size_t k = 0; k < a.size(); ++k) a[k] += ge[k];
        acc.monos[a].lin.emplace_back(v, sgn * gc);
      }
    }
    if (basis_out) *basis_out = basis;
    return ids;
  }

  /// Emit "acc = 0" as equality rows, one per monomial.
  void finish_condition(const LinPoly& acc) {
    for (const auto& [e, mono] : acc.monos) {
      if (mono.lin.empty()) {
        if (std::abs(mono.constant) > 1e-12)
          throw std::logic_error("condition monomial has no matching freedom");
        continue;
      }
      eq_rows_.push_back(mono.lin);
      eq_rhs_.push_back(-mono.constant);
    }
  }

  void add_scalar_equality(const std::vector<std::pair<int, double>>& lin,
                           double rhs) {
    eq_rows_.push_back(lin);
    eq_rhs_.push_back(rhs);
  }

  /// Eigenvalue-shift margin variable over the given Gram blocks. Applied to
  /// the residual blocks sigma_0 only: the generator multipliers stay SOS
  /// even when the margin goes negative, so a frozen multiplier set remains
  /// valid in the next alternation step.
  int add_margin_variable(const std::vector<int>& gram_ids) {
    int t = prob.add_variable();
    for (int id : gram_ids) {
      const GramInfo& gi = grams_[id];
      const int n = int(gi.basis.size());
      for (int i = 0; i < n; ++i) prob.add_entry(t, gi.sdp_block, i, i, -1.0);
    }
    return t;
  }

  /// trace(all Grams) + slack = rho, slack >= 0. Returns slack var id.
  int add_trace_cap(double rho) {
    int blk = prob.add_block(1);
    int s = prob.add_variable();
    prob.add_entry(s, blk, 0, 0, 1.0);
    std::vector<std::pair<int, double>> row;
    for (int v : diag_vars_) row.emplace_back(v, 1.0);
    row.emplace_back(s, 1.0);
    add_scalar_equality(row, rho);
    return s;
  }

  sdp::SdpSolution solve(const Eigen::VectorXd& objective,
                         const sdp::SdpOptions& opts) {
    const int m = prob.num_vars();
    prob.c = objective;
    prob.E = Eigen::MatrixXd::Zero(int(eq_rows_.size()), m);
    prob.d = Eigen::VectorXd::Zero(int(eq_rows_.size()));
    for (size_t r = 0; r < eq_rows_.size(); ++r) {
      for (const auto& [v, c] : eq_rows_[r]) prob.E(int(r), v) += c;
      prob.d[int(r)] = eq_rhs_[r];
    }
    return sdp::solve(prob, opts);
  }

  /// Reconstruct sigma(x) = m(x)^T G m(x) from a solved Gram block.
  Polynomial extract_gram_poly(int gram_id, const Eigen::VectorXd& y) const {
    const GramInfo& gi = grams_[gram_id];
    const int n = int(gi.basis.size());
    std::map<Exponents, double> terms;
    int idx = 0;
    for (int b = 0; b < n; ++b)
      for (int g = b; g < n; ++g, ++idx) {
        double v = y[gi.entry_var[idx]] * (b == g ? 1.0 : 2.0);
        Exponents e(gi.vars.size());
        for (size_t k = 0; k < e.size(); ++k)
          e[k] = gi.basis.monomials[b][k] + gi.basis.monomials[g][k];
        terms[e] += v;
      }
    return Polynomial::from_terms(gi.vars, std::move(terms)).pruned(1e-14);
  }

  Eigen::MatrixXd extract_gram_matrix(int gram_id,
                                      const Eigen::VectorXd& y) const {
    const GramInfo& gi = grams_[gram_id];
    const int n = int(gi.basis.size());
    Eigen::MatrixXd G(n, n);
    int idx = 0;
    for (int b = 0; b < n; ++b)
      for (int g = b; g < n; ++g, ++idx) G(b, g) = G(g, b) = y[gi.entry_var[idx]];
    return G;
  }

  static std::vector<int> var_positions(const std::vector<std::string>& sub,
                                        const std::vector<std::string>& all) {
    std::vector<int> pos;
    for (const auto& v : sub) {
      auto it = std::find(all.begin(), all.end(), v);
      if (it == all.end())
        throw std::logic_error("encoder: variable '" + v + "' missing");
      pos.push_back(int(it - all.begin()));
    }
    return pos;
  }

  static std::map<Exponents, double> remap(const Polynomial& p,
                                           const std::vector<std::string>& all) {
    std::map<Exponents, double> out;
    std::vector<int> pos = var_positions(p.variables(), all);
    for (const auto& [e, c] : p.terms()) {
      Exponents r(all.size(), 0);
      for (size_t k = 0; k < e.size(); ++k) r[pos[k]] = e[k];
      out[r] += c;
    }
    return out;
  }

  static std::vector<std::string> union_vars(
      std::initializer_list<const Polynomial*> ps,
      const std::vector<const Polynomial*>& more = {}) {
    std::vector<std::string> u;
    auto take = [&](const Polynomial* p) {
      u.insert(u.end(), p->variables().begin(), p->variables().end());
    };
    for (auto* p : ps) take(p);
    for (auto* p : more) take(p);
    std::sort(u.begin(), u.end());
    u.erase(std::unique(u.begin(), u.end()), u.end());
    return u;
  }

 private:
  std::vector<GramInfo> grams_;
  std::vector<int> diag_vars_;
  std::vector<std::vector<std::pair<int, double>>> eq_rows_;
  std::vector<double> eq_rhs_;
};

}  // namespace detail

/// SOS-multiplier certificate that p >= 0 on K, with multiplier degrees
/// capped at `deg`. NotFound means no certificate at this degree cap, not
/// that p is negative anywhere.
inline ProveResult prove_nonneg(const Polynomial& p, const SemialgebraicSet& K,
                                int deg, const SosOptions& opts = {}) {
  if (deg < 0 || deg % 2 != 0)
    throw std::invalid_argument("prove_nonneg: degree cap must be even, >= 0");

  std::vector<const Polynomial*> gens;
  for (const auto& k : K.inequalities) gens.push_back(&k);
  for (const auto& e : K.equalities) gens.push_back(&e);
  std::vector<std::string> vars = detail::Encoder::union_vars({&p}, gens);
  if (vars.empty()) vars.push_back("x");  // degenerate constant problem

  int D = even_up(p.degree());
  for (const auto& k : K.inequalities) D = std::max(D, even_up(deg + k.degree()));
  for (const auto& e : K.equalities) D = std::max(D, even_up(deg + e.degree()));

  detail::Encoder enc;
  detail::LinPoly acc;
  enc.accumulate_fixed(acc, p, +1.0, vars);
  std::vector<int> sig_ids;
  for (const auto& k : K.inequalities) {
    int g = enc.add_gram(vars, deg / 2);
    sig_ids.push_back(g);
    enc.accumulate_gram(acc, g, k, -1.0, vars);
  }
  std::vector<std::vector<int>> lam_ids;
  std::vector<MonomialBasis> lam_bases;
  for (const auto& e : K.equalities) {
    MonomialBasis b;
    lam_ids.push_back(enc.accumulate_free_poly(
        acc, e, std::max(0, D - e.degree()), -1.0, vars, &b));
    lam_bases.push_back(b);
  }
  int g0 = enc.add_gram(vars, D / 2);
  enc.accumulate_gram(acc, g0, Polynomial::constant(1.0), -1.0, vars);
  enc.finish_condition(acc);

  int t = enc.add_margin_variable({g0});
  double rho = opts.trace_cap > 0
                   ? opts.trace_cap
                   : 1e4 * std::max(1.0, p.max_abs_coeff());
  int slack = enc.add_trace_cap(rho);

  ProveResult res;
  for (int attempt = 0; attempt < 2; ++attempt) {
    Eigen::VectorXd obj = Eigen::VectorXd::Zero(enc.prob.num_vars());
    obj[t] = -1.0;  // maximize margin
    auto sol = enc.solve(obj, opts.sdp);
    res.margin = sol.y.size() ? sol.y[t] : 0.0;

    if (sol.status == sdp::SdpStatus::MaxIterations) {
      res.outcome = ProveOutcome::SolverFailure;
      res.diagnostic = "sdp did not converge: " + sol.message;
      return res;
    }
    if (sol.status == sdp::SdpStatus::Infeasible) {
      res.outcome = ProveOutcome::SolverFailure;
      res.diagnostic = "unexpected infeasibility in margin problem";
      return res;
    }
    // scale-relative acceptance: the solver resolves margins only up to its
    // relative gap times the coefficient magnitude of the input
    double accept_tol = opts.found_margin_tol * std::max(1.0, p.max_abs_coeff());
    if (res.margin < -accept_tol) {
      // retry once with a larger trace budget if the cap was binding
      if (opts.trace_cap == 0.0 && sol.y[slack] < 1e-6 * rho) {
        SosOptions o = opts;
        o.trace_cap = rho * 100.0;
        return prove_nonneg(p, K, deg, o);
      }
      res.outcome = ProveOutcome::NotFound;
      res.diagnostic = "no certificate at multiplier degree " +
                       std::to_string(deg) +
                       " (margin = " + poly::format_double(res.margin) + ")";
      return res;
    }

    PutinarCertificate cert;
    cert.multiplier_degree = deg;
    cert.margin = res.margin;
    cert.sigma0 = enc.extract_gram_poly(g0, sol.y);
    cert.gram_min_eig = sdp::min_eig(enc.extract_gram_matrix(g0, sol.y));
    for (size_t j = 0; j < sig_ids.size(); ++j) {
      cert.sigma.push_back(enc.extract_gram_poly(sig_ids[j], sol.y));
      cert.gram_min_eig = std::min(
          cert.gram_min_eig,
          sdp::min_eig(enc.extract_gram_matrix(sig_ids[j], sol.y)));
    }
    for (size_t j = 0; j < lam_ids.size(); ++j) {
      std::map<Exponents, double> terms;
      for (size_t r = 0; r < lam_ids[j].size(); ++r)
        terms[lam_bases[j].monomials[r]] += sol.y[lam_ids[j][r]];
      cert.lambda.push_back(
          Polynomial::from_terms(vars, std::move(terms)).pruned(1e-14));
    }

    Polynomial recon = p;
    for (size_t j = 0; j < K.inequalities.size(); ++j)
      recon -= cert.sigma[j] * K.inequalities[j];
    for (size_t j = 0; j < K.equalities.size(); ++j)
      recon -= cert.lambda[j] * K.equalities[j];
    recon -= cert.sigma0;
    cert.reconstruction_error = recon.max_abs_coeff();
    if (cert.reconstruction_error > 1e-7) {
      res.outcome = ProveOutcome::SolverFailure;
      res.diagnostic = "certificate reconstruction error " +
                       poly::format_double(cert.reconstruction_error);
      return res;
    }
    res.outcome = ProveOutcome::Found;
    res.cert = cert;
    return res;
  }
  return res;
}

/// Parametrized polynomial family p(x; theta) = base + sum theta_l basis_l.
struct TemplateFamily {
  Polynomial base;
  std::vector<Polynomial> basis;

  Polynomial instantiate(const Eigen::VectorXd& theta) const {
    Polynomial p = base;
    for (size_t l = 0; l < basis.size(); ++l) p += theta[int(l)] * basis[l];
    return p.pruned(1e-14);
  }
  int degree() const {
    int d = base.degree();
    for (const auto& b : basis) d = std::max(d, b.degree());
    return d;
  }
};

/// One positivity-on-set condition, affine in the shared template
/// parameters.
struct SynthCondition {
  TemplateFamily expr;
  SemialgebraicSet set;
  int multiplier_degree = 4;
  std::string name;
};

struct RoundLog {
  int round;
  std::string step;
  double margin;
};

struct AlternationOptions {
  int rounds = 20;
  double improvement_tol = 1e-6;
  double margin_target = 1e-6;
  Eigen::VectorXd theta_init;
  SosOptions sos;
};

struct AlternationResult {
  bool found = false;
  Eigen::VectorXd theta;
  Polynomial polynomial;
  double margin = 0.0;
  std::vector<RoundLog> log;
  std::vector<ProveResult> verification;  // per condition, from prove_nonneg
  std::string diagnostic;
};

/// Coordinate ascent on the shared Gram eigenvalue margin: fix template ->
/// best multipliers per condition; fix multipliers -> best template. The
/// output is only accepted after independent re-verification of every
/// condition with prove_nonneg.
inline AlternationResult alternation_synthesize(
    const TemplateFamily& tmpl, const std::vector<SynthCondition>& conditions,
    const AlternationOptions& opts = {}) {
  const int np = int(tmpl.basis.size());
  AlternationResult out;
  Eigen::VectorXd theta = opts.theta_init.size() == np
                              ? opts.theta_init
                              : Eigen::VectorXd::Zero(np);

  // multipliers per condition, carried across rounds
  struct Mults {
    std::vector<Polynomial> sigma;
    std::vector<Polynomial> lambda;
  };
  std::vector<Mults> mults(conditions.size());

  double prev_margin = -std::numeric_limits<double>::infinity();
  for (int round = 1; round <= opts.rounds; ++round) {
    // ---- multiplier step: conditions decouple, theta frozen
    double step_margin = std::numeric_limits<double>::infinity();
    bool solver_trouble = false;
    bool all_accept = true;
    for (size_t ci = 0; ci < conditions.size(); ++ci) {
      const auto& cond = conditions[ci];
      Polynomial expr = cond.expr.instantiate(theta);
      SosOptions so = opts.sos;
      so.found_margin_tol = 1e18;  // always extract multipliers
      ProveResult pr = prove_nonneg(expr, cond.set, cond.multiplier_degree, so);
      if (pr.outcome == ProveOutcome::SolverFailure || !pr.cert) {
        out.diagnostic = "round " + std::to_string(round) +
                         " multiplier subproblem failed on '" + cond.name +
                         "': " + pr.diagnostic;
        solver_trouble = true;
        break;
      }
      mults[ci].sigma = pr.cert->sigma;
      mults[ci].lambda = pr.cert->lambda;
      step_margin = std::min(step_margin, pr.margin);
      // same scale-relative test re-verification applies per condition;
      // degenerate problems approach margin 0 from below geometrically, so
      // once every condition is inside its band further rounds are wasted
      if (pr.margin < -opts.sos.found_margin_tol *
                          std::max(1.0, expr.max_abs_coeff()))
        all_accept = false;
    }
    if (solver_trouble) break;
    out.log.push_back({round, "multipliers", step_margin});
    if (all_accept) {
      out.margin = step_margin;
      break;
    }

    if (np == 0) {
      out.margin = step_margin;
      break;  // fixed template, nothing to improve
    }

    // ---- template step: multipliers frozen, solve jointly for theta
    detail::Encoder enc;
    std::vector<int> theta_ids, g0_ids;
    for (int l = 0; l < np; ++l) theta_ids.push_back(enc.add_scalar());

    for (size_t ci = 0; ci < conditions.size(); ++ci) {
      const auto& cond = conditions[ci];
      std::vector<const Polynomial*> ps;
      ps.push_back(&cond.expr.base);
      for (const auto& b : cond.expr.basis) ps.push_back(&b);
      for (const auto& k : cond.set.inequalities) ps.push_back(&k);
      for (const auto& e : cond.set.equalities) ps.push_back(&e);
      auto vars = detail::Encoder::union_vars({}, ps);

      int D = even_up(cond.expr.degree());
      for (const auto& k : cond.set.inequalities)
        D = std::max(D, even_up(cond.multiplier_degree + k.degree()));
      for (const auto& e : cond.set.equalities)
        D = std::max(D, even_up(cond.multiplier_degree + e.degree()));

      detail::LinPoly acc;
      enc.accumulate_fixed(acc, cond.expr.base, +1.0, vars);
      for (int l = 0; l < np; ++l)
        enc.accumulate_scalar(acc, theta_ids[l], cond.expr.basis[l], +1.0, vars);
      for (size_t j = 0; j < cond.set.inequalities.size(); ++j)
        enc.accumulate_fixed(
            acc, mults[ci].sigma[j] * cond.set.inequalities[j], -1.0, vars);
      for (size_t j = 0; j < cond.set.equalities.size(); ++j)
        enc.accumulate_free_poly(
            acc, cond.set.equalities[j],
            std::max(0, D - cond.set.equalities[j].degree()), -1.0, vars,
            nullptr);
      int g0 = enc.add_gram(vars, D / 2);
      g0_ids.push_back(g0);
      enc.accumulate_gram(acc, g0, Polynomial::constant(1.0), -1.0, vars);
      enc.finish_condition(acc);
    }
    int t = enc.add_margin_variable(g0_ids);
    double scale = std::max(1.0, tmpl.base.max_abs_coeff());
    enc.add_trace_cap(opts.sos.trace_cap > 0 ? opts.sos.trace_cap
                                             : 1e4 * scale);

    Eigen::VectorXd obj = Eigen::VectorXd::Zero(enc.prob.num_vars());
    obj[t] = -1.0;
    auto sol = enc.solve(obj, opts.sos.sdp);
    if (sol.status != sdp::SdpStatus::Optimal) {
      out.diagnostic = "round " + std::to_string(round) +
                       " template subproblem: " + sol.message;
      break;
    }
    for (int l = 0; l < np; ++l) theta[l] = sol.y[theta_ids[l]];
    double margin = sol.y[t];
    out.log.push_back({round, "template", margin});
    out.margin = margin;

    if (margin >= opts.margin_target) break;
    if (margin - prev_margin < opts.improvement_tol && round > 1) break;
    prev_margin = margin;
  }

  out.theta = theta;
  out.polynomial = tmpl.instantiate(theta);

  // independent re-verification; an output failing this is never returned
  // as found.
  bool all_ok = true;
  for (const auto& cond : conditions) {
    ProveResult pr = prove_nonneg(cond.expr.instantiate(theta), cond.set,
                                  cond.multiplier_degree, opts.sos);
    all_ok = all_ok && pr.outcome == ProveOutcome::Found;
    out.verification.push_back(std::move(pr));
  }
  out.found = all_ok;
  if (!all_ok && out.diagnostic.empty())
    out.diagnostic = "re-verification failed after alternation (margin " +
                     poly::format_double(out.margin) + ")";
  return out;
}

}  // namespace gsf::sos
