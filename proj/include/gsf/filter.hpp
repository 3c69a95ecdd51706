#pragma once

// State-inclusive safety filter: per input channel the admissible set at
// state x is the root interval of the quadratic
//   (a - u)(b - u) <= R,  a = u*_k(x), b = a + beta_max (g^T grad B)_k(x),
// with the relaxation R = gamma log((1-c)/(1-B(x))). R = 0 recovers the
// boundary sector family; deeper states get wider intervals.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "gsf/barrier.hpp"
#include "gsf/poly.hpp"
#include "gsf/rng.hpp"

namespace gsf::filter {

using poly::Polynomial;

/// Root interval of (a - u)(b - u) <= R for R >= 0: endpoints
/// ((a+b) -+ sqrt((a-b)^2 + 4R)) / 2.
inline std::pair<double, double> root_interval(double a, double b, double R) {
  double d = std::sqrt((a - b) * (a - b) + 4.0 * R);
  return {0.5 * (a + b - d), 0.5 * (a + b + d)};
}

struct SafetyFilter {
  barrier::BarrierCertificate cert;
  std::vector<Polynomial> u_star;  // reference policy, one per channel
  std::vector<Polynomial> gB;      // (g^T grad B)_k
  double beta_max = 1.0;
  double gamma = 100.0;
  double r_max = -1.0;  // cap on R; < 0 means the default 1e3 * gamma
  Eigen::Vector2d u_lo{-1e30, -1e30};  // actuator limits
  Eigen::Vector2d u_hi{+1e30, +1e30};

  SafetyFilter() = default;
  SafetyFilter(barrier::BarrierCertificate c, std::vector<Polynomial> us,
               std::vector<Polynomial> gb)
      : cert(std::move(c)), u_star(std::move(us)), gB(std::move(gb)) {
    if (u_star.size() != 2 || gB.size() != 2)
      throw std::invalid_argument("filter: two input channels expected");
    if (beta_max < 0.0 || gamma < 0.0)
      throw std::invalid_argument("filter: beta_max, gamma must be >= 0");
    B_ev = poly::Evaluator(cert.B, cert.state);
    for (int k = 0; k < 2; ++k) {
      us_ev[k] = poly::Evaluator(u_star[k], cert.state);
      gB_ev[k] = poly::Evaluator(gB[k], cert.state);
    }
  }

  double cap() const { return r_max < 0.0 ? 1e3 * gamma : r_max; }

  // cached evaluators; the filter itself stays a pure function of the state
  poly::Evaluator B_ev;
  poly::Evaluator us_ev[2], gB_ev[2];
};

struct Bounds {
  Eigen::Vector2d u_alpha, u_theta;  // quadratic root interval per channel
  double R = 0.0;
  double B = 0.0;
  bool no_guarantee = false;  // B(x) < c: outside the certified domain
  bool capped = false;        // R hit the configured cap
};

inline Bounds bounds(const SafetyFilter& f, const Eigen::VectorXd& x) {
  Bounds out;
  out.B = f.B_ev(x.data());
  if (out.B < f.cert.c) {
    out.no_guarantee = true;  // R stays 0: fall back to the sector set
  } else if (f.gamma > 0.0) {
    if (out.B >= 1.0 - 1e-9) {
      out.R = f.cap();
      out.capped = true;
    } else {
      out.R = f.gamma * std::log((1.0 - f.cert.c) / (1.0 - out.B));
      if (out.R > f.cap()) {
        out.R = f.cap();
        out.capped = true;
      }
    }
  }
  for (int k = 0; k < 2; ++k) {
    double a = f.us_ev[k](x.data());
    double b = a + f.beta_max * f.gB_ev[k](x.data());
    auto [lo, hi] = root_interval(a, b, out.R);
    out.u_alpha[k] = lo;
    out.u_theta[k] = hi;
  }
  return out;
}

struct FilterDecision {
  Eigen::Vector2d requested, admitted;
  Eigen::Vector2d u_alpha, u_theta;
  double R = 0.0;
  bool active = false;      // some channel was modified
  bool infeasible = false;  // interval and actuator box are disjoint
  bool no_guarantee = false;
};

inline FilterDecision admit(const SafetyFilter& f, const Eigen::VectorXd& x,
                            const Eigen::Vector2d& requested) {
  Bounds b = bounds(f, x);
  FilterDecision d;
  d.requested = requested;
  d.u_alpha = b.u_alpha;
  d.u_theta = b.u_theta;
  d.R = b.R;
  d.no_guarantee = b.no_guarantee;
  for (int k = 0; k < 2; ++k) {
    double lo = std::max(b.u_alpha[k], f.u_lo[k]);
    double hi = std::min(b.u_theta[k], f.u_hi[k]);
    double u;
    if (lo > hi) {
      // disjoint: stay inside the certified interval, as close to the
      // actuator range as possible
      d.infeasible = true;
      u = b.u_theta[k] < f.u_lo[k] ? b.u_theta[k] : b.u_alpha[k];
    } else {
      u = std::clamp(requested[k], lo, hi);
    }
    d.admitted[k] = u;
    if (u != requested[k]) d.active = true;
  }
  return d;
}

/// Per grid point: is the zero input admissible on the given channel?
inline std::vector<uint8_t> safe_zero_region(
    const SafetyFilter& f, int channel,
    const std::vector<Eigen::VectorXd>& grid) {
  std::vector<uint8_t> out;
  out.reserve(grid.size());
  for (const auto& x : grid) {
    Bounds b = bounds(f, x);
    out.push_back(!b.no_guarantee && b.u_alpha[channel] <= 0.0 &&
                  0.0 <= b.u_theta[channel]);
  }
  return out;
}

/// Largest beta such that the sampled sup of |u*_k + beta (g^T grad B)_k|
/// over D[c] stays within the per-channel actuator limit, by bisection on
/// the (monotone) sampled criterion.
inline double choose_beta_max(const barrier::BarrierCertificate& cert,
                              const std::vector<Polynomial>& u_star,
                              const std::vector<Polynomial>& gB,
                              const Eigen::Vector2d& u_limit,
                              const barrier::Box& box, int samples = 10000,
                              uint64_t seed = 9) {
  rng::SplitMix64 g(seed);
  std::vector<Eigen::VectorXd> pts;
  for (int s = 0; s < samples; ++s)
    pts.push_back(barrier::detail::sample_region(cert, box, g));

  std::vector<poly::Evaluator> ue, we;
  for (int k = 0; k < 2; ++k) {
    ue.emplace_back(u_star[k], cert.state);
    we.emplace_back(gB[k], cert.state);
  }
  auto ok = [&](double beta) {
    for (const auto& x : pts)
      for (int k = 0; k < 2; ++k)
        if (std::abs(ue[k](x.data()) + beta * we[k](x.data())) > u_limit[k])
          return false;
    return true;
  };

  if (!ok(0.0)) return 0.0;  // the reference policy already violates limits
  double hi = 1.0;
  int grow = 0;
  while (ok(hi) && grow++ < 60) hi *= 2.0;
  if (grow >= 60) return hi;  // g^T grad B ~ 0 on the region; unconstrained
  double lo = 0.0;
  for (int it = 0; it < 80; ++it) {
    double m = 0.5 * (lo + hi);
    (ok(m) ? lo : hi) = m;
  }
  return lo;
}

}  // namespace gsf::filter
