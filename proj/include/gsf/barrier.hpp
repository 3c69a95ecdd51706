#pragma once

// Per-inverter barrier certificates: template synthesis on the isolated
// polynomial dynamics, distributed verification of the level-set invariance
// condition under neighbor disturbances, and synthesis of the reference
// safety policy u* with its minimized input bound.
//
// Nested SOS programs over the joint (x_i, x_j) space are intractable at the
// degrees involved, so coupling terms are lower-bounded by dense sampling
// over the neighbor level sets; wherever sampling stands in for a
// certificate the verification record says so.

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gsf/grid.hpp"
#include "gsf/poly.hpp"
#include "gsf/rng.hpp"
#include "gsf/sos.hpp"

namespace gsf::barrier {

using poly::Polynomial;

/// Unsafe region {x : w_j(x) > 0 for some j}.
struct UnsafeSet {
  std::vector<Polynomial> w;
};

/// Axis-aligned operating box, aligned with a state-variable order. All
/// level-set reasoning is restricted to it.
struct Box {
  Eigen::VectorXd lo, hi;

  void validate() const {
    if (lo.size() != hi.size())
      throw std::invalid_argument("box: bound size mismatch");
    for (int k = 0; k < lo.size(); ++k)
      if (!(lo[k] < 0.0 && 0.0 < hi[k]))
        throw std::invalid_argument("box: must contain the origin strictly");
  }

  sos::SemialgebraicSet as_set(const std::vector<std::string>& state) const {
    if (int(state.size()) != lo.size())
      throw std::invalid_argument("box: state size mismatch");
    sos::SemialgebraicSet s;
    for (size_t k = 0; k < state.size(); ++k) {
      Polynomial v = Polynomial::variable(state[k]);
      s.inequalities.push_back((v - lo[int(k)]) * (hi[int(k)] - v));
    }
    return s;
  }

  bool contains(const Eigen::VectorXd& x) const {
    for (int k = 0; k < lo.size(); ++k)
      if (x[k] < lo[k] || x[k] > hi[k]) return false;
    return true;
  }
};

struct VerificationRecord {
  std::string condition;
  bool passed = false;
  bool sampling_fallback = false;  // no SOS certificate, sampled evidence only
  double margin = 0.0;
  std::string note;
};

struct BarrierCertificate {
  std::vector<std::string> state;
  Polynomial B;
  double c = 0.0;
  double kappa = 1.0;
  std::vector<VerificationRecord> records;

  double eval(const Eigen::VectorXd& x) const {
    std::map<std::string, double> pt;
    for (size_t k = 0; k < state.size(); ++k) pt[state[k]] = x[int(k)];
    return B.evaluate(pt);
  }
};

/// Scales B so that B(0) = 1. Idempotent; rejects certificates whose value
/// at the origin is not positive.
inline BarrierCertificate normalized(BarrierCertificate cert) {
  double b0 = cert.B.coeff({});
  if (b0 <= 0.0)
    throw std::invalid_argument("normalize: B(0) must be positive");
  if (b0 != 1.0) cert.B = (1.0 / b0) * cert.B;
  return cert;
}

/// Lie derivative of B along the vector field rhs over `state`.
inline Polynomial lie(const Polynomial& B, const std::vector<std::string>& state,
                      const std::vector<Polynomial>& rhs) {
  Polynomial s;
  for (size_t k = 0; k < state.size(); ++k)
    s += B.derivative(state[k]) * rhs[k];
  return s;
}

namespace detail {

inline Eigen::VectorXd sample_box(const Box& box, rng::SplitMix64& g) {
  Eigen::VectorXd x(box.lo.size());
  for (int k = 0; k < x.size(); ++k) x[k] = g.uniform(box.lo[k], box.hi[k]);
  return x;
}

/// Uniform rejection sample of {B >= c} inside the box. `order` names the
/// box components and may extend past B's variables (sub-state
/// certificates: the level set is a cylinder along the extra components).
inline Eigen::VectorXd sample_region(const Polynomial& B, double c,
                                     const std::vector<std::string>& order,
                                     const Box& box, rng::SplitMix64& g,
                                     int max_tries = 10000) {
  poly::Evaluator ev(B, order);
  for (int t = 0; t < max_tries; ++t) {
    Eigen::VectorXd x = sample_box(box, g);
    if (ev(x.data()) >= c) return x;
  }
  throw std::runtime_error(
      "sample_region: acceptance rate too low; level set nearly empty in box");
}

inline Eigen::VectorXd sample_region(const BarrierCertificate& cert,
                                     const Box& box, rng::SplitMix64& g,
                                     int max_tries = 10000) {
  return sample_region(cert.B, cert.c, cert.state, box, g, max_tries);
}

/// Boundary point of {B = c} found by root-tracing along a random ray from
/// the origin; returns false when the ray leaves the box before crossing.
inline bool sample_boundary(const Polynomial& B, double c,
                            const std::vector<std::string>& order,
                            const Box& box, rng::SplitMix64& g,
                            Eigen::VectorXd& out) {
  poly::Evaluator ev(B, order);
  const int n = int(box.lo.size());
  Eigen::VectorXd dir(n);
  double norm2 = 0.0;
  for (int k = 0; k < n; ++k) {
    // Box-Muller pair per coordinate keeps the direction isotropic
    double u1 = std::max(g.uniform01(), 1e-300), u2 = g.uniform01();
    dir[k] = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    norm2 += dir[k] * dir[k];
  }
  if (norm2 == 0.0) return false;
  dir /= std::sqrt(norm2);

  double t_exit = std::numeric_limits<double>::infinity();
  for (int k = 0; k < n; ++k) {
    if (dir[k] > 0.0) t_exit = std::min(t_exit, box.hi[k] / dir[k]);
    if (dir[k] < 0.0) t_exit = std::min(t_exit, box.lo[k] / dir[k]);
  }

  auto val = [&](double t) {
    Eigen::VectorXd x = t * dir;
    return ev(x.data()) - c;
  };
  const int steps = 64;
  double prev_t = 0.0, prev_v = val(0.0);
  if (prev_v < 0.0) return false;  // origin outside the level set
  for (int s = 1; s <= steps; ++s) {
    double t = t_exit * double(s) / steps;
    double v = val(t);
    if (v < 0.0) {
      double a = prev_t, b = t;
      for (int it = 0; it < 60; ++it) {
        double m = 0.5 * (a + b);
        (val(m) >= 0.0 ? a : b) = m;
      }
      out = 0.5 * (a + b) * dir;
      return true;
    }
    prev_t = t;
    prev_v = v;
  }
  return false;  // level set exits the box along this ray
}

inline bool sample_boundary(const BarrierCertificate& cert, const Box& box,
                            rng::SplitMix64& g, Eigen::VectorXd& out) {
  return sample_boundary(cert.B, cert.c, cert.state, box, g, out);
}

}  // namespace detail

struct SynthOptions {
  int degree = 4;            // barrier template degree
  int multiplier_degree = 2;
  double kappa = 1.0;
  double eps = 1e-4;         // slack scale of the unsafe-side condition
  Box box;
  Eigen::VectorXd theta_init;
  // variables the template ranges over; empty means the whole state. The
  // conditions still quantify over every state variable appearing in f or
  // the box, so a sub-state template (e.g. omega and voltage only) is
  // certified against the full dynamics.
  std::vector<std::string> template_vars;
  sos::AlternationOptions alternation;

  // barrier problems are degenerate at the optimum (B pinned to zero on the
  // unsafe boundary), so the coordinate ascent needs a deep round budget
  SynthOptions() {
    alternation.rounds = 150;
    alternation.improvement_tol = 1e-12;
  }
};

struct SynthResult {
  bool found = false;
  BarrierCertificate cert;
  sos::AlternationResult alternation;
};

/// Barrier conditions for the isolated subsystem dx = f(x):
///   (a) B >= 0 on the complement of the unsafe region,
///   (b) B <= -eps*w_j wherever w_j >= 0,
///   (c) grad(B)^T f + kappa B >= 0,
/// all restricted to the operating box. The template is 1 + sum theta_l m_l
/// over monomials of degree 1..degree, so B(0) = 1 by construction.
inline std::vector<sos::SynthCondition> barrier_conditions(
    const sos::TemplateFamily& B, const std::vector<Polynomial>& f,
    const std::vector<std::string>& state, const UnsafeSet& unsafe,
    const SynthOptions& opts) {
  sos::SemialgebraicSet box_set = opts.box.as_set(state);
  std::vector<sos::SynthCondition> conds;

  sos::SynthCondition safe;
  safe.expr = B;
  for (const auto& w : unsafe.w) safe.set.inequalities.push_back(-1.0 * w);
  safe.set = safe.set.intersect(box_set);
  safe.multiplier_degree = opts.multiplier_degree;
  safe.name = "nonneg-on-safe";
  conds.push_back(std::move(safe));

  for (size_t j = 0; j < unsafe.w.size(); ++j) {
    sos::SynthCondition uns;
    uns.expr.base = -1.0 * B.base - opts.eps * unsafe.w[j];
    for (const auto& b : B.basis) uns.expr.basis.push_back(-1.0 * b);
    uns.set.inequalities.push_back(unsafe.w[j]);
    uns.set = uns.set.intersect(box_set);
    uns.multiplier_degree = opts.multiplier_degree;
    uns.name = "negative-on-unsafe-" + std::to_string(j);
    conds.push_back(std::move(uns));
  }

  sos::SynthCondition deriv;
  deriv.expr.base = lie(B.base, state, f) + opts.kappa * B.base;
  for (const auto& b : B.basis)
    deriv.expr.basis.push_back(lie(b, state, f) + opts.kappa * b);
  deriv.set = box_set;
  deriv.multiplier_degree = opts.multiplier_degree;
  deriv.name = "lie-derivative";
  conds.push_back(std::move(deriv));
  return conds;
}

inline SynthResult synth_isolated(const std::vector<Polynomial>& f,
                                  const std::vector<std::string>& state,
                                  const UnsafeSet& unsafe,
                                  const SynthOptions& opts) {
  opts.box.validate();
  std::map<std::string, double> origin;
  for (const auto& v : state) origin[v] = 0.0;
  for (const auto& w : unsafe.w)
    if (w.evaluate(origin) >= 0.0)
      throw std::invalid_argument(
          "synth_isolated: unsafe set touches the origin (w(0) >= 0)");
  for (const auto& fr : f)
    if (std::abs(fr.coeff({})) > 1e-10)
      throw std::invalid_argument("synth_isolated: f(0) != 0");

  const std::vector<std::string>& tvars =
      opts.template_vars.empty() ? state : opts.template_vars;
  sos::TemplateFamily B;
  B.base = Polynomial::constant(1.0);
  poly::MonomialBasis basis =
      poly::MonomialBasis::up_to_degree(int(tvars.size()), opts.degree);
  for (const auto& m : basis.monomials) {
    int deg = 0;
    for (int e : m) deg += e;
    if (deg == 0) continue;
    Polynomial term = Polynomial::constant(1.0);
    for (size_t k = 0; k < tvars.size(); ++k)
      term = term * Polynomial::variable(tvars[k]).pow(m[k]);
    B.basis.push_back(term);
  }

  sos::AlternationOptions aopts = opts.alternation;
  if (opts.theta_init.size() == int(B.basis.size())) {
    aopts.theta_init = opts.theta_init;
  } else {
    // Seed the alternation with the product of unsafe-boundary distances,
    // scaled to 1 at the origin: zero on every unsafe boundary, positive
    // inside. The default all-zero start (B = 1) often walks into a local
    // optimum of the margin alternation; this shape rarely does.
    Polynomial B0 = Polynomial::constant(1.0);
    for (const auto& w : unsafe.w) B0 = B0 * (-1.0 * w);
    double b00 = B0.evaluate(origin);
    if (b00 > 1e-9 && B0.degree() <= opts.degree) {
      B0 = (1.0 / b00) * B0;
      auto key = [](const std::vector<std::string>& vs,
                    const poly::Exponents& e) {
        std::map<std::string, int> k;
        for (size_t i = 0; i < vs.size(); ++i)
          if (e[i] > 0) k[vs[i]] = e[i];
        return k;
      };
      std::map<std::map<std::string, int>, int> index;
      for (size_t l = 0; l < B.basis.size(); ++l)
        index[key(B.basis[l].variables(),
                  B.basis[l].terms().begin()->first)] = int(l);
      Eigen::VectorXd th = Eigen::VectorXd::Zero(int(B.basis.size()));
      bool representable = true;
      for (const auto& [e, c] : B0.terms()) {
        auto k = key(B0.variables(), e);
        if (k.empty()) continue;  // matches the fixed base term
        auto it = index.find(k);
        if (it == index.end()) {
          representable = false;  // unsafe set uses variables outside tvars
          break;
        }
        th[it->second] = c;
      }
      if (representable) aopts.theta_init = th;
    }
  }

  SynthResult res;
  res.alternation = sos::alternation_synthesize(
      B, barrier_conditions(B, f, state, unsafe, opts), aopts);
  res.found = res.alternation.found;
  res.cert.state = tvars;
  res.cert.B = res.alternation.polynomial;
  res.cert.kappa = opts.kappa;
  res.cert.c = 0.0;
  auto conds = barrier_conditions(B, f, state, unsafe, opts);
  for (size_t k = 0; k < res.alternation.verification.size(); ++k) {
    const auto& pr = res.alternation.verification[k];
    VerificationRecord rec;
    rec.condition = conds[k].name;
    rec.passed = pr.outcome == sos::ProveOutcome::Found;
    rec.margin = pr.margin;
    rec.note = pr.diagnostic;
    res.cert.records.push_back(std::move(rec));
  }
  if (res.found) res.cert = normalized(res.cert);
  return res;
}

struct DistributedOptions {
  int boundary_samples = 2000;
  int neighbor_samples = 400;
  int multiplier_degree = 2;
  uint64_t seed = 1;
  double tol = 1e-6;
  sos::SosOptions sos;
};

struct DistributedReport {
  int inverter = 0;
  bool pass = false;
  bool sos_certified = false;
  bool sampling_fallback = false;
  double margin = 0.0;
  std::map<int, double> coupling_min;  // sampled lower bound per neighbor
  Eigen::VectorXd worst_point;         // boundary state of the worst sample
  std::string note;
};

/// Checks the level-set invariance condition per inverter: the Lie
/// derivative of B_i along f_i + g_i u_i + sum_j h_ij is >= 0 on
/// {B_i = c_i} x prod_j {B_j >= c_j}, within the operating boxes. Coupling
/// terms are lower-bounded by joint sampling; the local condition then gets
/// an SOS certificate, falling back to pure sampling when none is found.
inline std::vector<DistributedReport> verify_distributed(
    const std::vector<BarrierCertificate>& certs,
    const grid::Decomposition& dec,
    const std::vector<std::vector<Polynomial>>& policy,
    const std::vector<Box>& boxes, const DistributedOptions& opts = {}) {
  const int m = int(dec.inverters.size());
  if (int(certs.size()) != m || int(boxes.size()) != m)
    throw std::invalid_argument("verify_distributed: size mismatch");

  rng::SplitMix64 root(opts.seed);
  std::vector<DistributedReport> out;

  for (int i = 0; i < m; ++i) {
    const auto& inv = dec.inverters[i];
    const auto& cert = certs[i];
    // conditions quantify over the full inverter state even when the
    // certificate lives on a sub-state
    const std::vector<std::string>& vars_i = inv.state;
    DistributedReport rep;
    rep.inverter = i;

    std::vector<Polynomial> rhs = inv.f;
    if (i < int(policy.size()) && !policy[i].empty()) {
      for (int r = 0; r < inv.dim(); ++r)
        for (int k = 0; k < 2; ++k)
          if (inv.g(r, k) != 0.0) rhs[r] += inv.g(r, k) * policy[i][k];
    }
    Polynomial lie_local = lie(cert.B, vars_i, rhs);

    // boundary points of this inverter, shared by all neighbor bounds
    rng::SplitMix64 gi = root.fork(uint64_t(i) * 7919 + 1);
    std::vector<Eigen::VectorXd> bpts;
    for (int s = 0; s < opts.boundary_samples * 4 &&
                    int(bpts.size()) < opts.boundary_samples;
         ++s) {
      Eigen::VectorXd x;
      if (detail::sample_boundary(cert.B, cert.c, vars_i, boxes[i], gi, x))
        bpts.push_back(x);
    }
    if (bpts.empty()) {
      rep.pass = true;
      rep.note = "level-set boundary not met inside the operating box";
      out.push_back(std::move(rep));
      continue;
    }

    // sampled per-neighbor coupling lower bounds and per-boundary-point
    // worst coupling for the fallback
    Eigen::VectorXd worst_total =
        Eigen::VectorXd::Constant(int(bpts.size()),
                                  std::numeric_limits<double>::infinity());
    poly::Evaluator lie_ev(lie_local, vars_i);
    for (size_t p = 0; p < bpts.size(); ++p)
      worst_total[int(p)] = lie_ev(bpts[p].data());

    for (const auto& [j, hj] : inv.h) {
      const std::vector<std::string>& vars_j = dec.inverters[j].state;
      Polynomial cpl = lie(cert.B, vars_i, hj);
      std::vector<std::string> vars = vars_i;
      vars.insert(vars.end(), vars_j.begin(), vars_j.end());
      poly::Evaluator cev(cpl, vars);
      rng::SplitMix64 gj = root.fork(uint64_t(i) * 7919 + uint64_t(j) + 100);

      std::vector<Eigen::VectorXd> npts;
      for (int s = 0; s < opts.neighbor_samples; ++s)
        npts.push_back(detail::sample_region(certs[j].B, certs[j].c, vars_j,
                                             boxes[j], gj));

      double dmin = 0.0;  // conservative: coupling bound never above zero
      std::vector<double> buf(vars.size());
      for (size_t p = 0; p < bpts.size(); ++p) {
        for (int k = 0; k < bpts[p].size(); ++k) buf[k] = bpts[p][k];
        double w = std::numeric_limits<double>::infinity();
        for (const auto& xn : npts) {
          for (int k = 0; k < xn.size(); ++k)
            buf[bpts[p].size() + k] = xn[k];
          w = std::min(w, cev(buf.data()));
        }
        worst_total[int(p)] += w;
        dmin = std::min(dmin, w);
      }
      rep.coupling_min[j] = dmin;
    }

    // local SOS certificate with the sampled disturbance bound folded in
    double dsum = 0.0;
    for (const auto& [j, d] : rep.coupling_min) dsum += d;
    sos::SemialgebraicSet K = boxes[i].as_set(vars_i);
    K.equalities.push_back(cert.B - cert.c);
    sos::ProveResult pr = sos::prove_nonneg(lie_local + dsum, K,
                                            opts.multiplier_degree, opts.sos);

    int wi = 0;
    double wmargin = worst_total.minCoeff(&wi);
    rep.worst_point = bpts[wi];
    if (pr.outcome == sos::ProveOutcome::Found) {
      rep.pass = true;
      rep.sos_certified = true;
      rep.margin = pr.margin;
      rep.note = "sos certificate with sampled coupling bound";
    } else {
      rep.sampling_fallback = true;
      rep.margin = wmargin;
      rep.pass = wmargin >= -opts.tol;
      rep.note = rep.pass ? "sampled evidence only, no sos certificate"
                          : "violation at sampled boundary point";
    }
    out.push_back(std::move(rep));
  }
  return out;
}

struct PolicyOptions {
  int degree = 1;  // feedback template degree
  int multiplier_degree = 2;
  int boundary_samples = 1500;
  int neighbor_samples = 300;
  int region_samples = 2000;
  uint64_t seed = 1;
  double u_cap = 50.0;       // phase-one bound keeping the program compact
  double margin_tol = 1e-6;
  double grad_tol = 1e-8;    // Proposition-1 hypothesis threshold
  sos::SosOptions sos;
};

struct PolicyResult {
  std::vector<Polynomial> u;  // per input channel, over x_i
  double u_bar = 0.0;
  double margin = 0.0;
  bool fallback = false;  // closed-form beta * g^T grad B policy
  double beta = 0.0;
  std::string note;
};

/// Minimizes the worst-case input magnitude u_bar over policies u(x_i) of
/// the configured degree subject to the boundary invariance condition, with
/// neighbor disturbances folded in as a sampled scalar bound. Falls back to
/// the closed-form policy beta * g^T grad B when the program is infeasible
/// at this degree.
inline PolicyResult synth_policy(const std::vector<BarrierCertificate>& certs,
                                 const grid::Decomposition& dec, int i,
                                 const std::vector<Box>& boxes,
                                 const PolicyOptions& opts = {}) {
  const auto& inv = dec.inverters[i];
  const auto& cert = certs[i];
  const int n = inv.dim();
  // the program ranges over the full inverter state even for sub-state
  // certificates
  const std::vector<std::string>& vars_i = inv.state;
  boxes[i].validate();

  // channel polynomials (g^T grad B)_k
  std::vector<Polynomial> gB(2);
  for (int k = 0; k < 2; ++k)
    for (int r = 0; r < n; ++r)
      if (inv.g(r, k) != 0.0)
        gB[k] += inv.g(r, k) * cert.B.derivative(vars_i[r]);

  rng::SplitMix64 root(opts.seed);
  rng::SplitMix64 gb = root.fork(11);
  std::vector<Eigen::VectorXd> bpts;
  for (int s = 0; s < opts.boundary_samples * 4 &&
                  int(bpts.size()) < opts.boundary_samples;
       ++s) {
    Eigen::VectorXd x;
    if (detail::sample_boundary(cert.B, cert.c, vars_i, boxes[i], gb, x))
      bpts.push_back(x);
  }

  // Proposition 1 hypothesis: |grad B^T g| > 0 on the boundary set
  std::vector<poly::Evaluator> gB_ev;
  for (int k = 0; k < 2; ++k) gB_ev.emplace_back(gB[k], vars_i);
  for (const auto& x : bpts) {
    double norm2 = 0.0;
    for (int k = 0; k < 2; ++k) {
      double v = gB_ev[k](x.data());
      norm2 += v * v;
    }
    if (norm2 < opts.grad_tol * opts.grad_tol) {
      std::string pt = "(";
      for (int k = 0; k < x.size(); ++k)
        pt += (k ? ", " : "") + poly::format_double(x[k]);
      throw std::runtime_error(
          "synth_policy: grad B^T g vanishes at boundary point " + pt + ")");
    }
  }

  // sampled coupling lower bound, as in verify_distributed
  double dsum = 0.0;
  std::map<int, double> dmin_j;
  for (const auto& [j, hj] : inv.h) {
    const std::vector<std::string>& vars_j = dec.inverters[j].state;
    Polynomial cpl = lie(cert.B, vars_i, hj);
    std::vector<std::string> vars = vars_i;
    vars.insert(vars.end(), vars_j.begin(), vars_j.end());
    poly::Evaluator cev(cpl, vars);
    rng::SplitMix64 gj = root.fork(uint64_t(j) + 1000);
    double dmin = 0.0;
    std::vector<double> buf(vars.size());
    for (const auto& x : bpts) {
      for (int k = 0; k < x.size(); ++k) buf[k] = x[k];
      for (int s = 0; s < opts.neighbor_samples; ++s) {
        Eigen::VectorXd xn =
            detail::sample_region(certs[j].B, certs[j].c, vars_j, boxes[j], gj);
        for (int k = 0; k < xn.size(); ++k) buf[x.size() + k] = xn[k];
        dmin = std::min(dmin, cev(buf.data()));
      }
    }
    dmin_j[j] = dmin;
    dsum += dmin;
  }

  Polynomial lie_free = lie(cert.B, vars_i, inv.f) + dsum;

  // policy template: one coefficient per channel and monomial
  poly::MonomialBasis basis =
      poly::MonomialBasis::up_to_degree(n, opts.degree);
  std::vector<Polynomial> mono;
  for (const auto& e : basis.monomials) {
    Polynomial t = Polynomial::constant(1.0);
    for (int k = 0; k < n; ++k)
      t = t * Polynomial::variable(vars_i[k]).pow(e[k]);
    mono.push_back(t);
  }
  const int nm = int(mono.size());

  sos::SemialgebraicSet box_set = boxes[i].as_set(vars_i);
  sos::SemialgebraicSet bound_set = box_set;
  bound_set.inequalities.push_back(cert.B - cert.c);
  sos::SemialgebraicSet lie_set = box_set;
  lie_set.equalities.push_back(cert.B - cert.c);

  auto build = [&](bool phase_one, double ubar_fix) {
    sos::detail::Encoder enc;
    std::vector<std::vector<int>> uid(2);
    for (int k = 0; k < 2; ++k)
      for (int l = 0; l < nm; ++l) uid[k].push_back(enc.add_scalar());
    int ubar = enc.add_scalar();
    std::vector<int> g0s;

    // invariance condition on the boundary set
    {
      auto vars = vars_i;
      int D = sos::even_up(std::max(
          {lie_free.degree(), gB[0].degree() + opts.degree,
           opts.multiplier_degree + 2, opts.multiplier_degree + cert.B.degree()}));
      sos::detail::LinPoly acc;
      enc.accumulate_fixed(acc, lie_free, +1.0, vars);
      for (int k = 0; k < 2; ++k)
        for (int l = 0; l < nm; ++l)
          enc.accumulate_scalar(acc, uid[k][l], gB[k] * mono[l], +1.0, vars);
      for (const auto& kq : lie_set.inequalities) {
        int g = enc.add_gram(vars, opts.multiplier_degree / 2);
        enc.accumulate_gram(acc, g, kq, -1.0, vars);
      }
      for (const auto& e : lie_set.equalities)
        enc.accumulate_free_poly(acc, e, std::max(0, D - e.degree()), -1.0,
                                 vars, nullptr);
      int g0 = enc.add_gram(vars, D / 2);
      g0s.push_back(g0);
      enc.accumulate_gram(acc, g0, Polynomial::constant(1.0), -1.0, vars);
      enc.finish_condition(acc);
    }

    // |u_k| <= u_bar over the level set
    for (int k = 0; k < 2; ++k)
      for (double sgn : {+1.0, -1.0}) {
        auto vars = vars_i;
        int D = sos::even_up(std::max(
            opts.degree, opts.multiplier_degree + cert.B.degree()));
        sos::detail::LinPoly acc;
        if (phase_one)
          enc.accumulate_fixed(acc, Polynomial::constant(ubar_fix), +1.0, vars);
        else
          enc.accumulate_scalar(acc, ubar, Polynomial::constant(1.0), +1.0,
                                vars);
        for (int l = 0; l < nm; ++l)
          enc.accumulate_scalar(acc, uid[k][l], sgn * -1.0 * mono[l], +1.0,
                                vars);
        for (const auto& kq : bound_set.inequalities) {
          int g = enc.add_gram(vars, opts.multiplier_degree / 2);
          enc.accumulate_gram(acc, g, kq, -1.0, vars);
        }
        int g0 = enc.add_gram(vars, D / 2);
        enc.accumulate_gram(acc, g0, Polynomial::constant(1.0), -1.0, vars);
        enc.finish_condition(acc);
      }

    return std::tuple(std::move(enc), uid, ubar, g0s);
  };

  PolicyResult res;

  // Proposition-1 style closed form u = beta g^T grad B with the sampled
  // max-ratio gain; used whenever the SOS program gives no usable policy
  auto closed_form = [&](const std::string& note) {
    Polynomial drift = lie(cert.B, vars_i, inv.f);
    poly::Evaluator drift_ev(drift, vars_i);
    double beta = 0.0;
    for (const auto& x : bpts) {
      double num = std::abs(drift_ev(x.data()));
      // coupling contribution uses the sampled per-neighbor worst case
      double den = 0.0;
      for (int k = 0; k < 2; ++k) {
        double v = gB_ev[k](x.data());
        den += v * v;
      }
      beta = std::max(beta, (num - dsum) / den);
    }
    res.fallback = true;
    res.beta = beta;
    res.u = {beta * gB[0], beta * gB[1]};
    rng::SplitMix64 gr = root.fork(77);
    double ub = 0.0;
    std::vector<poly::Evaluator> uev;
    for (int k = 0; k < 2; ++k) uev.emplace_back(res.u[k], vars_i);
    for (int s = 0; s < opts.region_samples; ++s) {
      Eigen::VectorXd x =
          detail::sample_region(cert.B, cert.c, vars_i, boxes[i], gr);
      for (int k = 0; k < 2; ++k) ub = std::max(ub, std::abs(uev[k](x.data())));
    }
    res.u_bar = ub;
    res.note = note;
    return res;
  };

  // phase one: maximize the invariance margin under a generous input cap
  {
    auto [enc, uid, ubar, g0s] = build(true, opts.u_cap);
    int t = enc.add_margin_variable({g0s[0]});
    enc.add_trace_cap(1e5);
    Eigen::VectorXd obj = Eigen::VectorXd::Zero(enc.prob.num_vars());
    obj[t] = -1.0;
    auto sol = enc.solve(obj, opts.sos.sdp);
    bool feasible = sol.status == sdp::SdpStatus::Optimal &&
                    sol.y[t] >= -opts.margin_tol;
    if (!feasible)
      return closed_form("phase-one infeasible at degree " +
                         std::to_string(opts.degree) +
                         "; closed-form fallback");
  }

  // phase two: minimize u_bar with the invariance condition enforced
  auto [enc, uid, ubar, g0s] = build(false, 0.0);
  enc.add_trace_cap(1e5);
  Eigen::VectorXd obj = Eigen::VectorXd::Zero(enc.prob.num_vars());
  obj[ubar] = 1.0;
  auto sol = enc.solve(obj, opts.sos.sdp);
  if (sol.status != sdp::SdpStatus::Optimal)
    return closed_form("phase-two solve failed (" + sol.message +
                       "); closed-form fallback");

  res.u.assign(2, Polynomial());
  for (int k = 0; k < 2; ++k)
    for (int l = 0; l < nm; ++l) {
      double cl = sol.y[uid[k][l]];
      if (std::abs(cl) > 1e-9) res.u[k] += cl * mono[l];
    }
  res.u_bar = std::max(0.0, sol.y[ubar]);
  res.note = "sos policy, sampled coupling bound";

  Polynomial lie_pol = lie_free;
  for (int k = 0; k < 2; ++k) lie_pol += gB[k] * res.u[k];
  poly::Evaluator lev(lie_pol, vars_i);
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& x : bpts) worst = std::min(worst, lev(x.data()));
  res.margin = worst;
  return res;
}

/// Largest beta such that every policy in the family u* + beta' g^T grad B,
/// beta' in [0, beta], respects the symmetric actuator limits over the
/// sampled level set.
inline double beta_max_for_limits(const BarrierCertificate& cert,
                                  const std::vector<Polynomial>& u_star,
                                  const std::vector<Polynomial>& gB,
                                  const Eigen::Vector2d& u_limit, const Box& box,
                                  int samples = 5000, uint64_t seed = 5) {
  rng::SplitMix64 g(seed);
  std::vector<poly::Evaluator> ue, we;
  for (int k = 0; k < 2; ++k) {
    ue.emplace_back(u_star[k], cert.state);
    we.emplace_back(gB[k], cert.state);
  }
  double beta = std::numeric_limits<double>::infinity();
  for (int s = 0; s < samples; ++s) {
    Eigen::VectorXd x = detail::sample_region(cert, box, g);
    for (int k = 0; k < 2; ++k) {
      double a = ue[k](x.data()), w = we[k](x.data()), L = u_limit[k];
      if (std::abs(a) > L) return 0.0;  // u* itself violates the limit
      if (w > 0.0) beta = std::min(beta, (L - a) / w);
      if (w < 0.0) beta = std::min(beta, (-L - a) / w);
    }
  }
  return std::isfinite(beta) ? beta : 1.0;
}

}  // namespace gsf::barrier
