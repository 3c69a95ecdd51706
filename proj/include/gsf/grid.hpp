#pragma once

// Microgrid data model: admittance assembly, Kron reduction to the inverter
// nodes, Newton power flow, and the decomposition of the shifted droop
// dynamics into isolated parts f_i, input maps g_i and pairwise couplings
// h_ij. Coordinates are shifted so the solved equilibrium is the origin;
// angles are measured against a reference inverter whose own angle state is
// dropped.

#include <Eigen/Dense>
#include <complex>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gsf/poly.hpp"

namespace gsf::grid {

using poly::Polynomial;

struct InverterParams {
  double lambda_p = 2.43;  // rad/s per p.u.
  double lambda_q = 0.2;   // p.u. per p.u.
  double tau = 0.5;        // s
  double v0 = 1.0;         // p.u.
  double P0 = 0.0;         // active set-point, p.u.
  double Q0 = 0.0;         // reactive set-point, p.u.

  void validate() const {
    if (lambda_p <= 0.0 || lambda_q <= 0.0 || tau <= 0.0)
      throw std::invalid_argument(
          "inverter params: lambda_p, lambda_q and tau must be positive");
  }
};

enum class BusKind { Inverter, Load };

struct Bus {
  BusKind kind = BusKind::Inverter;
  double v0 = 1.0;
  double P = 0.0;  // load consumption (p.u.), Load buses only
  double Q = 0.0;
};

struct Line {
  int from = 0;
  int to = 0;
  double r = 0.0;  // series resistance, p.u.
  double x = 0.0;  // series reactance, p.u.
  double b = 0.0;  // total line charging susceptance, p.u.
};

struct NetworkModel {
  std::vector<Bus> buses;
  std::vector<Line> lines;
  Eigen::MatrixXcd Y;  // node admittance matrix

  int size() const { return int(buses.size()); }

  void build_admittance() {
    const int n = size();
    Y = Eigen::MatrixXcd::Zero(n, n);
    for (const auto& ln : lines) {
      if (ln.from < 0 || ln.from >= n || ln.to < 0 || ln.to >= n)
        throw std::invalid_argument("line endpoint out of range");
      std::complex<double> ys = 1.0 / std::complex<double>(ln.r, ln.x);
      std::complex<double> ysh(0.0, ln.b / 2.0);
      Y(ln.from, ln.from) += ys + ysh;
      Y(ln.to, ln.to) += ys + ysh;
      Y(ln.from, ln.to) -= ys;
      Y(ln.to, ln.from) -= ys;
    }
  }

  std::vector<int> inverter_buses() const {
    std::vector<int> r;
    for (int i = 0; i < size(); ++i)
      if (buses[i].kind == BusKind::Inverter) r.push_back(i);
    return r;
  }

  std::vector<int> load_buses() const {
    std::vector<int> r;
    for (int i = 0; i < size(); ++i)
      if (buses[i].kind == BusKind::Load) r.push_back(i);
    return r;
  }

  std::vector<int> neighbors(int i, double tol = 1e-9) const {
    std::vector<int> r;
    for (int k = 0; k < size(); ++k)
      if (k != i && std::abs(Y(i, k).real()) + std::abs(Y(i, k).imag()) > tol)
        r.push_back(k);
    return r;
  }
};

/// Bus power injections P_i + j Q_i = V_i conj(sum_k Y_ik V_k) at the given
/// polar voltage profile.
inline void injections(const NetworkModel& net, const Eigen::VectorXd& theta,
                       const Eigen::VectorXd& v, Eigen::VectorXd& P,
                       Eigen::VectorXd& Q) {
  const int n = net.size();
  P.setZero(n);
  Q.setZero(n);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      double G = net.Y(i, k).real(), B = net.Y(i, k).imag();
      if (G == 0.0 && B == 0.0) continue;
      double d = theta[i] - theta[k];
      P[i] += v[i] * v[k] * (G * std::cos(d) + B * std::sin(d));
      Q[i] += v[i] * v[k] * (G * std::sin(d) - B * std::cos(d));
    }
}

/// Eliminates load buses: constant-power loads are converted to constant
/// impedance at their nominal voltage, then the admittance matrix is reduced
/// by the Schur complement Y_II - Y_IL Y_LL^-1 Y_LI. A network without load
/// buses is returned unchanged.
inline NetworkModel kron_reduce(const NetworkModel& net) {
  std::vector<int> inv = net.inverter_buses();
  std::vector<int> lod = net.load_buses();
  if (lod.empty()) return net;
  if (net.Y.rows() != net.size())
    throw std::invalid_argument("kron_reduce: admittance matrix not built");

  Eigen::MatrixXcd Y = net.Y;
  for (int l : lod) {
    const Bus& b = net.buses[l];
    // consumed S = P + jQ at |V| = v0  ->  shunt y = (P - jQ) / v0^2
    Y(l, l) += std::complex<double>(b.P, -b.Q) / (b.v0 * b.v0);
  }

  const int ni = int(inv.size()), nl = int(lod.size());
  Eigen::MatrixXcd Yii(ni, ni), Yil(ni, nl), Yli(nl, ni), Yll(nl, nl);
  for (int a = 0; a < ni; ++a)
    for (int b = 0; b < ni; ++b) Yii(a, b) = Y(inv[a], inv[b]);
  for (int a = 0; a < ni; ++a)
    for (int b = 0; b < nl; ++b) Yil(a, b) = Y(inv[a], lod[b]);
  for (int a = 0; a < nl; ++a)
    for (int b = 0; b < ni; ++b) Yli(a, b) = Y(lod[a], inv[b]);
  for (int a = 0; a < nl; ++a)
    for (int b = 0; b < nl; ++b) Yll(a, b) = Y(lod[a], lod[b]);

  Eigen::FullPivLU<Eigen::MatrixXcd> lu(Yll);
  if (!lu.isInvertible()) {
    std::string msg = "kron_reduce: singular load subnetwork {";
    for (size_t k = 0; k < lod.size(); ++k)
      msg += (k ? "," : "") + std::to_string(lod[k]);
    throw std::runtime_error(msg + "}: isolated or degenerate load buses");
  }

  NetworkModel out;
  for (int a : inv) out.buses.push_back(net.buses[a]);
  out.Y = Yii - Yil * lu.solve(Yli);
  return out;
}

struct PowerFlowResult {
  Eigen::VectorXd theta;  // rad
  Eigen::VectorXd v;      // p.u.
  Eigen::VectorXd P, Q;   // realized injections, p.u.
  int iterations = 0;
  bool converged = false;
  double residual = 0.0;
};

/// Newton-Raphson power flow: all buses are PQ with the given injection
/// targets except the slack bus, which holds theta = 0, v = v0.
inline PowerFlowResult power_flow(const NetworkModel& net,
                                  const Eigen::VectorXd& P_target,
                                  const Eigen::VectorXd& Q_target, int slack,
                                  double tol = 1e-10, int max_iter = 50) {
  const int n = net.size();
  if (slack < 0 || slack >= n)
    throw std::invalid_argument("power_flow: slack bus out of range");
  if (net.Y.rows() != n)
    throw std::invalid_argument("power_flow: admittance matrix not built");

  PowerFlowResult r;
  r.theta = Eigen::VectorXd::Zero(n);
  r.v = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) r.v[i] = net.buses[i].v0;

  std::vector<int> pq;
  for (int i = 0; i < n; ++i)
    if (i != slack) pq.push_back(i);
  const int m = int(pq.size());

  for (int it = 0; it < max_iter; ++it) {
    injections(net, r.theta, r.v, r.P, r.Q);
    Eigen::VectorXd F(2 * m);
    for (int a = 0; a < m; ++a) {
      F[a] = r.P[pq[a]] - P_target[pq[a]];
      F[m + a] = r.Q[pq[a]] - Q_target[pq[a]];
    }
    r.residual = F.size() ? F.cwiseAbs().maxCoeff() : 0.0;
    r.iterations = it;
    if (r.residual <= tol) {
      r.converged = true;
      return r;
    }

    // Jacobian of (P, Q) mismatches wrt (theta, v) at PQ buses
    Eigen::MatrixXd J(2 * m, 2 * m);
    J.setZero();
    for (int a = 0; a < m; ++a) {
      int i = pq[a];
      for (int b = 0; b < m; ++b) {
        int k = pq[b];
        double G = net.Y(i, k).real(), B = net.Y(i, k).imag();
        double d = r.theta[i] - r.theta[k];
        double c = std::cos(d), s = std::sin(d);
        if (k != i) {
          J(a, b) = r.v[i] * r.v[k] * (G * s - B * c);
          J(a, m + b) = r.v[i] * (G * c + B * s);
          J(m + a, b) = -r.v[i] * r.v[k] * (G * c + B * s);
          J(m + a, m + b) = r.v[i] * (G * s - B * c);
        } else {
          double Gii = net.Y(i, i).real(), Bii = net.Y(i, i).imag();
          J(a, b) = -r.Q[i] - Bii * r.v[i] * r.v[i];
          J(a, m + b) = r.P[i] / r.v[i] + Gii * r.v[i];
          J(m + a, b) = r.P[i] - Gii * r.v[i] * r.v[i];
          J(m + a, m + b) = r.Q[i] / r.v[i] - Bii * r.v[i];
        }
      }
    }
    Eigen::VectorXd dx = J.partialPivLu().solve(-F);
    for (int a = 0; a < m; ++a) {
      r.theta[pq[a]] += dx[a];
      r.v[pq[a]] += dx[m + a];
    }
  }
  injections(net, r.theta, r.v, r.P, r.Q);
  return r;
}

/// Shifted per-inverter subsystem: state x_i over named variables, isolated
/// polynomial dynamics f, constant input map g (columns u^p, u^q) and
/// coupling polynomials h_ij per neighbor.
struct InverterDynamics {
  int bus = 0;
  std::vector<std::string> state;  // (th, om, vm) or (om, vm) at the reference
  std::vector<Polynomial> f;
  Eigen::MatrixXd g;
  std::map<int, std::vector<Polynomial>> h;

  int dim() const { return int(state.size()); }
  bool has_angle() const { return state.size() == 3; }
};

struct Decomposition {
  NetworkModel net;  // reduced
  std::vector<InverterParams> params;
  PowerFlowResult eq;
  int reference = 0;
  std::vector<InverterDynamics> inverters;

  int dim(int i) const { return inverters[i].dim(); }
  int offset(int i) const {
    int o = 0;
    for (int k = 0; k < i; ++k) o += dim(k);
    return o;
  }
  int total_dim() const { return offset(int(inverters.size())); }
};

namespace detail {

inline std::string th_var(int i) { return "th" + std::to_string(i); }
inline std::string om_var(int i) { return "om" + std::to_string(i); }
inline std::string vm_var(int i) { return "vm" + std::to_string(i); }

/// Pairwise injection term of bus i from bus k (k may equal i), as a
/// polynomial in the shifted variables; trig terms truncated at trig_degree.
/// Returns {p_ik, q_ik}.
inline std::pair<Polynomial, Polynomial> pair_injection(
    const NetworkModel& net, const PowerFlowResult& eq, int i, int k,
    int reference, int trig_degree) {
  double G = net.Y(i, k).real(), B = net.Y(i, k).imag();
  Polynomial vi = Polynomial::constant(eq.v[i]) + Polynomial::variable(vm_var(i));
  if (k == i) {
    Polynomial p = G * vi * vi;
    Polynomial q = -B * vi * vi;
    return {p, q};
  }
  Polynomial vk = Polynomial::constant(eq.v[k]) + Polynomial::variable(vm_var(k));
  Polynomial d;  // shifted angle difference
  if (i != reference) d += Polynomial::variable(th_var(i));
  if (k != reference) d -= Polynomial::variable(th_var(k));
  double center = eq.theta[i] - eq.theta[k];
  Polynomial s =
      poly::taylor_trig(poly::TrigKind::Sin, center, trig_degree, "d")
          .substitute("d", d);
  Polynomial c =
      poly::taylor_trig(poly::TrigKind::Cos, center, trig_degree, "d")
          .substitute("d", d);
  Polynomial p = vi * vk * (G * c + B * s);
  Polynomial q = vi * vk * (G * s - B * c);
  return {p, q};
}

/// Substitute x_k = 0 (th_k = 0, vm_k = 0) in a pairwise term.
inline Polynomial at_zero_neighbor(const Polynomial& p, int k) {
  return p.substitute(th_var(k), Polynomial::constant(0.0))
      .substitute(vm_var(k), Polynomial::constant(0.0))
      .pruned(0.0);
}

}  // namespace detail

/// Builds the decomposed shifted dynamics over the reduced network. The
/// equilibrium must come from power_flow on the same network; the reference
/// inverter (angle datum) defaults to the slack bus used there.
inline Decomposition assemble_dynamics(const NetworkModel& net,
                                       const std::vector<InverterParams>& params,
                                       const PowerFlowResult& eq,
                                       int reference = 0, int trig_degree = 3) {
  const int n = net.size();
  if (int(params.size()) != n)
    throw std::invalid_argument("assemble_dynamics: params size mismatch");
  for (const auto& p : params) p.validate();
  if (!eq.converged)
    throw std::invalid_argument("assemble_dynamics: equilibrium did not converge");

  Decomposition dec;
  dec.net = net;
  dec.params = params;
  dec.eq = eq;
  dec.reference = reference;

  using detail::om_var;
  using detail::th_var;
  using detail::vm_var;

  for (int i = 0; i < n; ++i) {
    const InverterParams& pp = params[i];
    InverterDynamics inv;
    inv.bus = i;
    if (i != reference) inv.state.push_back(th_var(i));
    inv.state.push_back(om_var(i));
    inv.state.push_back(vm_var(i));
    const int nd = inv.dim();

    std::vector<int> nbr = net.neighbors(i);

    // isolated injections: self term plus every pairwise term at x_k = 0
    auto [pii, qii] = detail::pair_injection(net, eq, i, i, reference, trig_degree);
    Polynomial P_iso = pii, Q_iso = qii;
    std::map<int, std::pair<Polynomial, Polynomial>> pair_pq;
    for (int k : nbr) {
      auto [pik, qik] = detail::pair_injection(net, eq, i, k, reference, trig_degree);
      P_iso += detail::at_zero_neighbor(pik, k);
      Q_iso += detail::at_zero_neighbor(qik, k);
      pair_pq[k] = {std::move(pik), std::move(qik)};
    }

    Polynomial om = Polynomial::variable(om_var(i));
    Polynomial vm = Polynomial::variable(vm_var(i));
    if (i != reference) inv.f.push_back(om);
    inv.f.push_back((1.0 / pp.tau) *
                    (-1.0 * om + pp.lambda_p * (eq.P[i] - P_iso)));
    inv.f.push_back((1.0 / pp.tau) *
                    (-1.0 * vm + pp.lambda_q * (eq.Q[i] - Q_iso)));

    // the equilibrium constants cancel by construction; drop the float dust
    for (auto& fr : inv.f) {
      double c0 = fr.coeff({});
      if (std::abs(c0) > 1e-10)
        throw std::logic_error("assemble_dynamics: origin is not an equilibrium");
      if (c0 != 0.0) fr -= c0;
      fr = fr.pruned(0.0);
    }

    inv.g = Eigen::MatrixXd::Zero(nd, 2);
    inv.g(nd - 2, 0) = pp.lambda_p / pp.tau;
    inv.g(nd - 1, 1) = pp.lambda_q / pp.tau;

    for (int k : nbr) {
      const auto& [pik, qik] = pair_pq[k];
      std::vector<Polynomial> hk(nd);
      if (i != reference && k == reference)
        hk[0] = -1.0 * Polynomial::variable(om_var(reference));
      hk[nd - 2] = (pp.lambda_p / pp.tau) *
                   (detail::at_zero_neighbor(pik, k) - pik);
      hk[nd - 1] = (pp.lambda_q / pp.tau) *
                   (detail::at_zero_neighbor(qik, k) - qik);
      for (auto& hr : hk) hr = hr.pruned(0.0);
      inv.h[k] = std::move(hk);
    }
    // angle coupling to the reference must exist even if the reduced line
    // admittance to it vanished
    if (i != reference && !inv.h.count(reference)) {
      std::vector<Polynomial> hk(nd);
      hk[0] = -1.0 * Polynomial::variable(om_var(reference));
      inv.h[reference] = std::move(hk);
    }
    dec.inverters.push_back(std::move(inv));
  }
  return dec;
}

/// Exact (trigonometric, untruncated) right-hand side of the shifted
/// networked dynamics. `x` is the stacked shifted state in Decomposition
/// layout; `u` is n x 2 with columns (u^p, u^q).
inline Eigen::VectorXd exact_rhs(const Decomposition& dec,
                                 const Eigen::VectorXd& x,
                                 const Eigen::MatrixXd& u) {
  const NetworkModel& net = dec.net;
  const int n = net.size();
  if (x.size() != dec.total_dim())
    throw std::invalid_argument("exact_rhs: state size mismatch");

  // unpack to absolute polar profile
  Eigen::VectorXd theta(n), v(n), om(n);
  for (int i = 0; i < n; ++i) {
    int o = dec.offset(i);
    bool ang = dec.inverters[i].has_angle();
    double th_shift = ang ? x[o] : 0.0;
    theta[i] = dec.eq.theta[i] + th_shift;
    om[i] = x[o + (ang ? 1 : 0)];
    v[i] = dec.eq.v[i] + x[o + (ang ? 2 : 1)];
  }
  Eigen::VectorXd P, Q;
  injections(net, theta, v, P, Q);

  Eigen::VectorXd dx(x.size());
  for (int i = 0; i < n; ++i) {
    const InverterParams& pp = dec.params[i];
    int o = dec.offset(i);
    bool ang = dec.inverters[i].has_angle();
    double up = u.size() ? u(i, 0) : 0.0;
    double uq = u.size() ? u(i, 1) : 0.0;
    if (ang) dx[o] = om[i] - om[dec.reference];
    dx[o + (ang ? 1 : 0)] =
        (-om[i] + pp.lambda_p * (dec.eq.P[i] + up - P[i])) / pp.tau;
    dx[o + (ang ? 2 : 1)] =
        (-(v[i] - dec.eq.v[i]) + pp.lambda_q * (dec.eq.Q[i] + uq - Q[i])) /
        pp.tau;
  }
  return dx;
}

}  // namespace gsf::grid
