#pragma once

// Transient simulation: classical fixed-step RK4 on the exact trigonometric
// network dynamics with the safety filter in the loop. Disturbance modes
// replace the neighbor states seen by each inverter's coupling terms with
// values sampled from the neighbors' certified level sets, reproducing the
// random-neighbor experiment while inverter i's own dynamics stay exact.

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gsf/barrier.hpp"
#include "gsf/filter.hpp"
#include "gsf/grid.hpp"
#include "gsf/rng.hpp"

namespace gsf::sim {

enum class DisturbanceMode { None, Frozen, Resampled };
enum class FilterMode { Off, On };

/// Piecewise-constant dispatch: u holds from time t until the next entry.
struct DispatchStep {
  double t = 0.0;
  Eigen::Vector2d u{0.0, 0.0};
};

struct Scenario {
  double horizon = 10.0;
  double step = 1e-3;
  std::vector<std::vector<DispatchStep>> dispatch;  // per inverter, by time
  DisturbanceMode disturbance = DisturbanceMode::None;
  double resample_period = 0.1;
  double neighbor_scale = 1.0;  // scales sampled neighbor deviations
  FilterMode filter = FilterMode::Off;
  uint64_t seed = 0;
  double blowup_norm = 1e3;
  Eigen::VectorXd x0;  // stacked initial state; empty means the equilibrium

  void validate(int n_inverters) const {
    if (step <= 0.0) throw std::invalid_argument("scenario: step must be > 0");
    if (horizon < step)
      throw std::invalid_argument("scenario: horizon must be >= step");
    if (!dispatch.empty() && int(dispatch.size()) != n_inverters)
      throw std::invalid_argument("scenario: dispatch size mismatch");
    if (disturbance == DisturbanceMode::Resampled && resample_period <= 0.0)
      throw std::invalid_argument("scenario: resample period must be > 0");
    if (neighbor_scale < 0.0)
      throw std::invalid_argument("scenario: neighbor scale must be >= 0");
    for (const auto& sched : dispatch)
      for (size_t k = 1; k < sched.size(); ++k)
        if (sched[k].t < sched[k - 1].t)
          throw std::invalid_argument("scenario: dispatch not time-sorted");
  }
};

/// Everything integrate() needs besides the scenario.
struct Model {
  grid::Decomposition dec;
  std::vector<barrier::BarrierCertificate> certs;  // per inverter
  std::vector<barrier::Box> boxes;                 // sampling boxes, per inverter
  std::vector<filter::SafetyFilter> filters;       // required when filter on
  std::vector<barrier::UnsafeSet> unsafe;          // monitored per inverter
};

struct SimTrace {
  double step = 0.0;
  uint64_t seed = 0;
  std::vector<double> t;
  std::vector<Eigen::MatrixXd> states;     // [i](step, component)
  std::vector<Eigen::VectorXd> barrier;    // [i](step): B_i(x_i)
  std::vector<Eigen::MatrixXd> requested;  // [i](step, channel)
  std::vector<Eigen::MatrixXd> admitted;
  std::vector<Eigen::VectorXd> relax;      // [i](step): log-term R
  std::vector<std::vector<uint8_t>> filter_active;  // [i][step]
  std::vector<std::vector<uint8_t>> is_unsafe;      // [i][step]
  bool blew_up = false;

  int steps() const { return int(t.size()); }

  /// FNV-1a over the raw trajectory bytes; equal traces hash equal
  /// bit-for-bit.
  uint64_t hash() const {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* p, size_t n) {
      const unsigned char* b = static_cast<const unsigned char*>(p);
      for (size_t k = 0; k < n; ++k) h = (h ^ b[k]) * 1099511628211ull;
    };
    mix(&step, sizeof step);
    mix(&seed, sizeof seed);
    mix(t.data(), t.size() * sizeof(double));
    for (const auto& m : states) mix(m.data(), size_t(m.size()) * sizeof(double));
    for (const auto& v : barrier) mix(v.data(), size_t(v.size()) * sizeof(double));
    for (const auto& m : admitted) mix(m.data(), size_t(m.size()) * sizeof(double));
    for (const auto& f : filter_active) mix(f.data(), f.size());
    return h;
  }
};

/// Rejection sample of D[level] = {B >= level} within the box; errors out
/// when the acceptance rate drops below 1e-4. `order` names the box
/// components and may be a superset of the certificate's variables (the
/// level set is then a cylinder along the extra components).
inline Eigen::VectorXd sample_level_set(const barrier::BarrierCertificate& cert,
                                        double level, const barrier::Box& box,
                                        const std::vector<std::string>& order,
                                        rng::SplitMix64& g,
                                        double* acceptance = nullptr) {
  poly::Evaluator ev(cert.B, order);
  const int max_tries = 10000;
  for (int tries = 1; tries <= max_tries; ++tries) {
    Eigen::VectorXd x = barrier::detail::sample_box(box, g);
    if (ev(x.data()) >= level) {
      if (acceptance) *acceptance = 1.0 / tries;
      return x;
    }
  }
  throw std::runtime_error(
      "sample_level_set: acceptance rate below 1e-4; adjust the operating box");
}

inline Eigen::VectorXd sample_level_set(const barrier::BarrierCertificate& cert,
                                        double level, const barrier::Box& box,
                                        rng::SplitMix64& g,
                                        double* acceptance = nullptr) {
  return sample_level_set(cert, level, box, cert.state, g, acceptance);
}

namespace detail {

inline Eigen::Vector2d dispatch_at(const std::vector<DispatchStep>& sched,
                                   double t) {
  Eigen::Vector2d u(0.0, 0.0);
  for (const auto& d : sched) {
    if (d.t > t) break;
    u = d.u;
  }
  return u;
}

}  // namespace detail

inline SimTrace integrate(const Model& model, const Scenario& sc) {
  const grid::Decomposition& dec = model.dec;
  const int m = int(dec.inverters.size());
  sc.validate(m);
  if (sc.filter == FilterMode::On && int(model.filters.size()) != m)
    throw std::invalid_argument("integrate: filter mode on without filters");
  if (sc.disturbance != DisturbanceMode::None &&
      (int(model.certs.size()) != m || int(model.boxes.size()) != m))
    throw std::invalid_argument(
        "integrate: disturbance modes need certificates and boxes");

  const int nsteps = int(std::llround(sc.horizon / sc.step));
  SimTrace tr;
  tr.step = sc.step;
  tr.seed = sc.seed;
  tr.t.reserve(nsteps + 1);
  for (int i = 0; i < m; ++i) {
    int d = dec.dim(i);
    tr.states.emplace_back(nsteps + 1, d);
    tr.barrier.emplace_back(Eigen::VectorXd::Zero(nsteps + 1));
    tr.requested.emplace_back(nsteps + 1, 2);
    tr.admitted.emplace_back(nsteps + 1, 2);
    tr.relax.emplace_back(Eigen::VectorXd::Zero(nsteps + 1));
    tr.filter_active.emplace_back(nsteps + 1, 0);
    tr.is_unsafe.emplace_back(nsteps + 1, 0);
  }

  // certificates, filters and unsafe sets may live on a sub-state such as
  // (om, vm); everything is evaluated against the full inverter state order
  // by variable name
  std::vector<poly::Evaluator> B_ev;
  for (int i = 0; i < m && i < int(model.certs.size()); ++i)
    B_ev.emplace_back(model.certs[i].B, dec.inverters[i].state);
  std::vector<std::vector<poly::Evaluator>> w_ev(m);
  for (int i = 0; i < m && i < int(model.unsafe.size()); ++i)
    for (const auto& w : model.unsafe[i].w)
      w_ev[i].emplace_back(w, dec.inverters[i].state);

  std::vector<std::vector<int>> fproj(m);  // filter state -> inverter state
  if (sc.filter == FilterMode::On)
    for (int i = 0; i < m; ++i)
      for (const auto& v : model.filters[i].cert.state) {
        const auto& st = dec.inverters[i].state;
        auto it = std::find(st.begin(), st.end(), v);
        if (it == st.end())
          throw std::invalid_argument("integrate: filter variable '" + v +
                                      "' not in inverter " +
                                      std::to_string(i) + " state");
        fproj[i].push_back(int(it - st.begin()));
      }

  Eigen::VectorXd x = Eigen::VectorXd::Zero(dec.total_dim());
  if (sc.x0.size()) {
    if (sc.x0.size() != dec.total_dim())
      throw std::invalid_argument("integrate: x0 size mismatch");
    x = sc.x0;
  }
  rng::SplitMix64 root(sc.seed);

  // one frozen neighbor sample per inverter, re-drawn on the resample grid
  std::vector<Eigen::VectorXd> nbr(m);
  auto resample = [&](int epoch) {
    for (int j = 0; j < m; ++j) {
      rng::SplitMix64 g = root.fork(uint64_t(epoch) * 1000003ull + uint64_t(j));
      nbr[j] = sc.neighbor_scale *
               sample_level_set(model.certs[j], model.certs[j].c,
                                model.boxes[j], dec.inverters[j].state, g);
    }
  };
  if (sc.disturbance != DisturbanceMode::None) resample(0);

  // stacked rhs; in disturbance modes inverter i sees sampled neighbors
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(m, 2);
  auto rhs = [&](const Eigen::VectorXd& y) {
    if (sc.disturbance == DisturbanceMode::None)
      return grid::exact_rhs(dec, y, u);
    Eigen::VectorXd dy(y.size());
    for (int i = 0; i < m; ++i) {
      Eigen::VectorXd yi = y;
      for (int j = 0; j < m; ++j)
        if (j != i) yi.segment(dec.offset(j), dec.dim(j)) = nbr[j];
      dy.segment(dec.offset(i), dec.dim(i)) =
          grid::exact_rhs(dec, yi, u).segment(dec.offset(i), dec.dim(i));
    }
    return dy;
  };

  int epoch = 0;
  for (int s = 0; s <= nsteps; ++s) {
    double t = s * sc.step;
    if (sc.disturbance == DisturbanceMode::Resampled) {
      int e = int(t / sc.resample_period);
      if (e != epoch) {
        epoch = e;
        resample(epoch);
      }
    }

    // filter pass at the step start, zero-order hold across the RK stages
    for (int i = 0; i < m; ++i) {
      Eigen::Vector2d req =
          i < int(sc.dispatch.size()) ? detail::dispatch_at(sc.dispatch[i], t)
                                      : Eigen::Vector2d(0.0, 0.0);
      Eigen::VectorXd xi = x.segment(dec.offset(i), dec.dim(i));
      Eigen::Vector2d adm = req;
      if (sc.filter == FilterMode::On) {
        Eigen::VectorXd xf(int(fproj[i].size()));
        for (size_t k = 0; k < fproj[i].size(); ++k) xf[int(k)] = xi[fproj[i][k]];
        filter::FilterDecision d = filter::admit(model.filters[i], xf, req);
        adm = d.admitted;
        tr.relax[i][s] = d.R;
        tr.filter_active[i][s] = d.active;
      }
      u(i, 0) = adm[0];
      u(i, 1) = adm[1];
      tr.requested[i].row(s) = req.transpose();
      tr.admitted[i].row(s) = adm.transpose();
      tr.states[i].row(s) = xi.transpose();
      if (i < int(B_ev.size())) tr.barrier[i][s] = B_ev[i](xi.data());
      for (auto& we : w_ev[i])
        if (we(xi.data()) > 0.0) tr.is_unsafe[i][s] = 1;
    }
    tr.t.push_back(t);
    if (s == nsteps) break;

    const double hstep = sc.step;
    Eigen::VectorXd k1 = rhs(x);
    Eigen::VectorXd k2 = rhs(x + 0.5 * hstep * k1);
    Eigen::VectorXd k3 = rhs(x + 0.5 * hstep * k2);
    Eigen::VectorXd k4 = rhs(x + hstep * k3);
    x += (hstep / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

    if (!x.allFinite() || x.norm() > sc.blowup_norm) {
      tr.blew_up = true;
      for (int i = 0; i < m; ++i) {
        tr.states[i].conservativeResize(s + 2, Eigen::NoChange);
        tr.barrier[i].conservativeResize(s + 2);
        tr.requested[i].conservativeResize(s + 2, Eigen::NoChange);
        tr.admitted[i].conservativeResize(s + 2, Eigen::NoChange);
        tr.relax[i].conservativeResize(s + 2);
        tr.filter_active[i].resize(s + 2);
        tr.is_unsafe[i].resize(s + 2);
        tr.states[i].row(s + 1) =
            x.segment(dec.offset(i), dec.dim(i)).transpose();
      }
      tr.t.push_back(t + hstep);
      break;
    }
  }
  return tr;
}

struct RunStats {
  uint64_t seed = 0;
  int violations = 0;        // steps with any inverter unsafe
  double min_barrier = 0.0;  // min over time and inverters of B_i - c_i
  double filter_duty = 0.0;  // fraction of (step, inverter) slots clamped
  bool blew_up = false;
};

struct MonteCarloResult {
  std::vector<RunStats> runs;
  int runs_with_violation = 0;

  std::string csv() const {
    std::ostringstream os;
    os << "run,seed,violations,min_barrier,filter_duty,blew_up\n";
    for (size_t r = 0; r < runs.size(); ++r)
      os << r << ',' << runs[r].seed << ',' << runs[r].violations << ','
         << poly::format_double(runs[r].min_barrier) << ','
         << poly::format_double(runs[r].filter_duty) << ','
         << int(runs[r].blew_up) << '\n';
    return os.str();
  }
};

inline RunStats summarize(const Model& model, const SimTrace& tr) {
  RunStats st;
  st.seed = tr.seed;
  st.blew_up = tr.blew_up;
  st.min_barrier = std::numeric_limits<double>::infinity();
  int active = 0, slots = 0;
  const int m = int(tr.states.size());
  for (int s = 0; s < tr.steps(); ++s) {
    bool bad = false;
    for (int i = 0; i < m; ++i) {
      if (tr.is_unsafe[i][s]) bad = true;
      active += tr.filter_active[i][s];
      ++slots;
      if (i < int(model.certs.size()))
        st.min_barrier =
            std::min(st.min_barrier, tr.barrier[i][s] - model.certs[i].c);
    }
    st.violations += bad;
  }
  st.filter_duty = slots ? double(active) / slots : 0.0;
  if (!std::isfinite(st.min_barrier)) st.min_barrier = 0.0;
  return st;
}

/// Repeated integrate() with per-run seeds forked from the scenario seed;
/// deterministic and mergeable by run index.
inline MonteCarloResult monte_carlo(const Model& model, const Scenario& tmpl,
                                    int n_runs) {
  if (n_runs < 1) throw std::invalid_argument("monte_carlo: n_runs >= 1");
  MonteCarloResult out;
  rng::SplitMix64 root(tmpl.seed);
  for (int r = 0; r < n_runs; ++r) {
    Scenario sc = tmpl;
    sc.seed = root.fork(uint64_t(r)).next();
    RunStats st = summarize(model, integrate(model, sc));
    out.runs_with_violation += st.violations > 0;
    out.runs.push_back(st);
  }
  return out;
}

/// One row per step per inverter.
inline std::string trace_csv(const SimTrace& tr,
                             const grid::Decomposition& dec) {
  std::ostringstream os;
  os << "t,inverter";
  int dmax = 0;
  for (const auto& s : tr.states) dmax = std::max(dmax, int(s.cols()));
  for (int k = 0; k < dmax; ++k) os << ",x" << k;
  os << ",B,req_p,req_q,adm_p,adm_q,R,active,unsafe\n";
  for (int s = 0; s < tr.steps(); ++s)
    for (size_t i = 0; i < tr.states.size(); ++i) {
      os << poly::format_double(tr.t[s]) << ',' << i;
      for (int k = 0; k < dmax; ++k)
        os << ','
           << (k < tr.states[i].cols()
                   ? poly::format_double(tr.states[i](s, k))
                   : "");
      os << ',' << poly::format_double(tr.barrier[i][s]) << ','
         << poly::format_double(tr.requested[i](s, 0)) << ','
         << poly::format_double(tr.requested[i](s, 1)) << ','
         << poly::format_double(tr.admitted[i](s, 0)) << ','
         << poly::format_double(tr.admitted[i](s, 1)) << ','
         << poly::format_double(tr.relax[i][s]) << ','
         << int(tr.filter_active[i][s]) << ',' << int(tr.is_unsafe[i][s])
         << '\n';
    }
  (void)dec;
  return os.str();
}

}  // namespace gsf::sim
