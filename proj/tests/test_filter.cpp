#include "gsf/filter.hpp"

#include <catch2/catch_amalgamated.hpp>

#include "test_rng.hpp"

using namespace gsf::filter;
using gsf::barrier::BarrierCertificate;
using gsf::barrier::Box;
using gsf::poly::Polynomial;

namespace {

Polynomial var(const std::string& n) { return Polynomial::variable(n); }

BarrierCertificate circle_cert(double c) {
  BarrierCertificate cert;
  cert.state = {"x", "y"};
  cert.B = 1.0 - var("x") * var("x") - var("y") * var("y");
  cert.c = c;
  return cert;
}

// filter with non-trivial reference policy and sector direction
SafetyFilter make_filter(double c, double beta, double gamma) {
  SafetyFilter f(circle_cert(c),
                 {0.1 + 0.2 * var("x"), -0.3 * var("y")},
                 {-2.0 * var("x") + 0.5, -2.0 * var("y") - 0.2});
  f.beta_max = beta;
  f.gamma = gamma;
  return f;
}

double bisect_root(double a, double b, double R, double lo, double hi) {
  auto q = [&](double u) { return (a - u) * (b - u) - R; };
  for (int it = 0; it < 200; ++it) {
    double m = 0.5 * (lo + hi);
    (q(m) >= 0.0 ? lo : hi) = m;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("boundary state gives the R = 0 sector interval") {
  SafetyFilter f = make_filter(0.75, 1.0, 100.0);
  Eigen::Vector2d x(0.5, 0.0);  // B = 0.75 = c
  Bounds b = bounds(f, x);
  CHECK(b.R == 0.0);
  CHECK_FALSE(b.no_guarantee);
  for (int k = 0; k < 2; ++k) {
    double a = f.u_star[k].evaluate({{"x", x[0]}, {"y", x[1]}});
    double t = a + f.gB[k].evaluate({{"x", x[0]}, {"y", x[1]}});
    CHECK(b.u_alpha[k] == Catch::Approx(std::min(a, t)).margin(1e-12));
    CHECK(b.u_theta[k] == Catch::Approx(std::max(a, t)).margin(1e-12));
  }
}

TEST_CASE("gamma = 0 interval ignores state depth") {
  SafetyFilter f = make_filter(0.0, 1.0, 0.0);
  TestRng rng(5);
  for (int s = 0; s < 50; ++s) {
    Eigen::Vector2d x(rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6));
    Bounds b = bounds(f, x);
    CHECK(b.R == 0.0);
    std::map<std::string, double> pt{{"x", x[0]}, {"y", x[1]}};
    for (int k = 0; k < 2; ++k) {
      double a = f.u_star[k].evaluate(pt);
      double t = a + f.gB[k].evaluate(pt);
      CHECK(b.u_alpha[k] == Catch::Approx(std::min(a, t)).margin(1e-12));
      CHECK(b.u_theta[k] == Catch::Approx(std::max(a, t)).margin(1e-12));
    }
  }
}

TEST_CASE("a = b = 0 with R = 1 admits exactly [-1, 1]") {
  auto [lo, hi] = root_interval(0.0, 0.0, 1.0);
  CHECK(lo == Catch::Approx(-1.0));
  CHECK(hi == Catch::Approx(1.0));
}

TEST_CASE("root interval matches a bisection oracle") {
  TestRng rng(17);
  for (int s = 0; s < 500; ++s) {
    double a = rng.uniform(-5.0, 5.0);
    double b = rng.uniform(-5.0, 5.0);
    double R = rng.uniform(0.0, 10.0);
    auto [lo, hi] = root_interval(a, b, R);
    // the quadratic is positive far out and negative between the roots
    double span = std::abs(a) + std::abs(b) + R + 10.0;
    CHECK(lo == Catch::Approx(bisect_root(a, b, R, -span, 0.5 * (lo + hi)))
                    .margin(1e-10));
    CHECK(hi == Catch::Approx(bisect_root(a, b, R, span, 0.5 * (lo + hi)))
                    .margin(1e-10));
    // endpoints satisfy the quadratic with equality
    CHECK(std::abs((a - lo) * (b - lo) - R) < 1e-9 * std::max(1.0, R));
    CHECK(std::abs((a - hi) * (b - hi) - R) < 1e-9 * std::max(1.0, R));
  }
}

TEST_CASE("width identity") {
  SafetyFilter f = make_filter(0.0, 1.7, 35.0);
  TestRng rng(23);
  for (int s = 0; s < 200; ++s) {
    Eigen::Vector2d x(rng.uniform(-0.7, 0.7), rng.uniform(-0.7, 0.7));
    if (x.squaredNorm() >= 1.0) continue;
    Bounds b = bounds(f, x);
    std::map<std::string, double> pt{{"x", x[0]}, {"y", x[1]}};
    for (int k = 0; k < 2; ++k) {
      double w = f.beta_max * f.gB[k].evaluate(pt);
      CHECK(b.u_theta[k] - b.u_alpha[k] ==
            Catch::Approx(std::sqrt(w * w + 4.0 * b.R)).margin(1e-9));
    }
  }
}

TEST_CASE("admitted inputs satisfy the relaxed sector inequality") {
  SafetyFilter f = make_filter(0.0, 1.0, 100.0);
  TestRng rng(31);
  for (int s = 0; s < 300; ++s) {
    Eigen::Vector2d x(rng.uniform(-0.7, 0.7), rng.uniform(-0.7, 0.7));
    if (x.squaredNorm() >= 1.0) continue;
    Bounds b = bounds(f, x);
    std::map<std::string, double> pt{{"x", x[0]}, {"y", x[1]}};
    for (int k = 0; k < 2; ++k) {
      double a = f.u_star[k].evaluate(pt);
      double t = a + f.gB[k].evaluate(pt);
      double u = rng.uniform(b.u_alpha[k], b.u_theta[k]);
      CHECK((a - u) * (t - u) <= b.R + 1e-9);
      // just beyond either endpoint the inequality fails
      double below = b.u_alpha[k] - 1e-6, above = b.u_theta[k] + 1e-6;
      CHECK((a - below) * (t - below) > b.R);
      CHECK((a - above) * (t - above) > b.R);
    }
  }
}

TEST_CASE("interval width is monotone in gamma and beta_max") {
  TestRng rng(41);
  for (int s = 0; s < 100; ++s) {
    Eigen::Vector2d x(rng.uniform(-0.7, 0.7), rng.uniform(-0.7, 0.7));
    if (x.squaredNorm() >= 1.0) continue;
    double w_prev[2] = {-1.0, -1.0};
    for (double gamma : {0.0, 10.0, 100.0}) {
      Bounds b = bounds(make_filter(0.0, 1.0, gamma), x);
      for (int k = 0; k < 2; ++k) {
        double w = b.u_theta[k] - b.u_alpha[k];
        CHECK(w >= w_prev[k] - 1e-12);
        w_prev[k] = w;
      }
    }
    w_prev[0] = w_prev[1] = -1.0;
    for (double beta : {0.0, 0.5, 1.0, 2.0}) {
      Bounds b = bounds(make_filter(0.0, beta, 50.0), x);
      for (int k = 0; k < 2; ++k) {
        double w = b.u_theta[k] - b.u_alpha[k];
        CHECK(w >= w_prev[k] - 1e-12);
        w_prev[k] = w;
      }
    }
  }
}

TEST_CASE("states outside the certified domain get the sector fallback") {
  SafetyFilter f = make_filter(0.5, 1.0, 100.0);
  Eigen::Vector2d x(0.9, 0.0);  // B = 0.19 < c
  Bounds b = bounds(f, x);
  CHECK(b.no_guarantee);
  CHECK(b.R == 0.0);
  FilterDecision d = admit(f, x, Eigen::Vector2d(0.0, 0.0));
  CHECK(d.no_guarantee);
}

TEST_CASE("relaxation is capped near the origin") {
  SafetyFilter f = make_filter(0.0, 1.0, 100.0);
  Bounds b = bounds(f, Eigen::Vector2d(0.0, 0.0));  // B = 1: log singularity
  CHECK(b.capped);
  CHECK(b.R == Catch::Approx(1e5));  // default cap 1e3 * gamma
  f.r_max = 7.0;
  Bounds b2 = bounds(f, Eigen::Vector2d(1e-8, 0.0));
  CHECK(b2.capped);
  CHECK(b2.R == 7.0);
}

TEST_CASE("admit clamps to the interval and flags activity") {
  SafetyFilter f = make_filter(0.0, 1.0, 10.0);
  Eigen::Vector2d x(0.3, -0.2);
  Bounds b = bounds(f, x);

  Eigen::Vector2d inside(0.5 * (b.u_alpha[0] + b.u_theta[0]),
                         0.5 * (b.u_alpha[1] + b.u_theta[1]));
  FilterDecision d = admit(f, x, inside);
  CHECK_FALSE(d.active);
  CHECK(d.admitted == inside);

  Eigen::Vector2d outside(b.u_theta[0] + 3.0, b.u_alpha[1] - 2.0);
  d = admit(f, x, outside);
  CHECK(d.active);
  CHECK(d.admitted[0] == Catch::Approx(b.u_theta[0]));
  CHECK(d.admitted[1] == Catch::Approx(b.u_alpha[1]));
  for (int k = 0; k < 2; ++k) {
    CHECK(d.admitted[k] >= b.u_alpha[k] - 1e-12);
    CHECK(d.admitted[k] <= b.u_theta[k] + 1e-12);
  }
}

TEST_CASE("zero request outside the interval goes to the nearest endpoint") {
  // boundary state where both sector endpoints are positive
  SafetyFilter f(circle_cert(0.0), {1.0 + 0.0 * var("x"), 2.0 + 0.0 * var("x")},
                 {0.5 + 0.0 * var("x"), 1.0 + 0.0 * var("x")});
  f.gamma = 0.0;
  Eigen::Vector2d x(1.0, 0.0);  // B = 0 = c
  FilterDecision d = admit(f, x, Eigen::Vector2d(0.0, 0.0));
  CHECK(d.active);
  CHECK(d.admitted[0] == Catch::Approx(1.0));  // interval [1, 1.5]
  CHECK(d.admitted[1] == Catch::Approx(2.0));  // interval [2, 3]
}

TEST_CASE("disjoint actuator box raises the infeasibility flag") {
  SafetyFilter f = make_filter(0.0, 1.0, 0.0);
  Eigen::Vector2d x(0.3, -0.2);
  Bounds b = bounds(f, x);
  f.u_hi = Eigen::Vector2d(b.u_alpha[0] - 0.5, 1e30);
  f.u_lo = Eigen::Vector2d(-1e30, -1e30);
  FilterDecision d = admit(f, x, Eigen::Vector2d(0.0, 0.0));
  CHECK(d.infeasible);
  // nearest certified endpoint to the actuator range
  CHECK(d.admitted[0] == Catch::Approx(b.u_alpha[0]));
}

TEST_CASE("safe-zero region grows with gamma") {
  std::vector<Eigen::VectorXd> grid;
  for (double x = -0.9; x <= 0.9; x += 0.15)
    for (double y = -0.9; y <= 0.9; y += 0.15)
      if (x * x + y * y < 1.0) grid.push_back(Eigen::Vector2d(x, y));

  std::vector<uint8_t> prev(grid.size(), 0);
  for (double gamma : {0.0, 10.0, 100.0}) {
    SafetyFilter f = make_filter(0.0, 1.0, gamma);
    for (int ch = 0; ch < 2; ++ch) {
      auto region = safe_zero_region(f, ch, grid);
      if (ch == 0) {
        for (size_t p = 0; p < grid.size(); ++p)
          if (prev[p]) CHECK(region[p]);  // set inclusion over the sweep
        prev = region;
      }
    }
  }

  // near the origin the capped relaxation makes zero admissible
  SafetyFilter f = make_filter(0.0, 1.0, 100.0);
  std::vector<Eigen::VectorXd> origin = {Eigen::Vector2d(0.0, 0.0)};
  CHECK(safe_zero_region(f, 0, origin)[0]);
  CHECK(safe_zero_region(f, 1, origin)[0]);

  // boundary state with a strictly positive sector excludes zero
  SafetyFilter fb(circle_cert(0.0), {1.0 + 0.0 * var("x"), 0.0 * var("x")},
                  {0.5 + 0.0 * var("x"), 0.0 * var("x")});
  fb.gamma = 0.0;
  std::vector<Eigen::VectorXd> bdry = {Eigen::Vector2d(1.0, 0.0)};
  CHECK_FALSE(safe_zero_region(fb, 0, bdry)[0]);
}

TEST_CASE("beta_max bisection matches the closed-form circle answer") {
  BarrierCertificate cert = circle_cert(0.0);
  Box box;
  box.lo = Eigen::Vector2d(-1.5, -1.5);
  box.hi = Eigen::Vector2d(1.5, 1.5);
  std::vector<Polynomial> u_star = {Polynomial(), Polynomial()};
  std::vector<Polynomial> gB = {var("x"), var("y")};

  // |beta x| <= 1/2 over the unit disc forces beta = 1/2
  double beta = choose_beta_max(cert, u_star, gB, Eigen::Vector2d(0.5, 0.5),
                                box, 20000);
  CHECK(beta == Catch::Approx(0.5).epsilon(0.02));

  u_star[0] = Polynomial::constant(1.0);
  CHECK(choose_beta_max(cert, u_star, gB, Eigen::Vector2d(0.5, 0.5), box) ==
        0.0);
}
