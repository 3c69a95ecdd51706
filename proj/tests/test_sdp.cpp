#include "gsf/sdp.hpp"

#include <catch2/catch_amalgamated.hpp>

#include "test_rng.hpp"

using namespace gsf::sdp;

TEST_CASE("min_eig basics") {
  CHECK_THAT(min_eig(Eigen::MatrixXd::Identity(3, 3)),
             Catch::Matchers::WithinAbs(1.0, 1e-12));
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(2, 2);
  d(0, 0) = 2.0;
  d(1, 1) = -1.0;
  CHECK_THAT(min_eig(d), Catch::Matchers::WithinAbs(-1.0, 1e-12));
  Eigen::MatrixXd m(2, 2);
  m << 2, 1, 1, 2;
  CHECK_THAT(min_eig(m), Catch::Matchers::WithinAbs(1.0, 1e-12));
  Eigen::MatrixXd ns(2, 2);
  ns << 0, 1, 0, 0;
  CHECK_THROWS(min_eig(ns));
}

TEST_CASE("1x1 LMI: minimize y subject to y >= 0") {
  SdpProblem p;
  p.add_block(1);
  int v = p.add_variable();
  p.add_entry(v, 0, 0, 0, 1.0);
  p.c = Eigen::VectorXd::Ones(1);
  auto sol = solve(p);
  REQUIRE(sol.status == SdpStatus::Optimal);
  CHECK_THAT(sol.y[0], Catch::Matchers::WithinAbs(0.0, 1e-7));
}

TEST_CASE("2x2 correlation boundary: maximize y s.t. [[1,y],[y,1]] psd") {
  SdpProblem p;
  p.add_block(2);
  p.set_F0(0, Eigen::MatrixXd::Identity(2, 2));
  int v = p.add_variable();
  p.add_entry(v, 0, 0, 1, 1.0);
  p.c = -Eigen::VectorXd::Ones(1);  // maximize y
  auto sol = solve(p);
  REQUIRE(sol.status == SdpStatus::Optimal);
  CHECK_THAT(sol.y[0], Catch::Matchers::WithinAbs(1.0, 1e-6));
  CHECK(sol.block_min_eig[0] >= -1e-8);
}

// SOS Gram feasibility for p = 2x^4 + 5y^4 - x^2 y^2 over basis
// (x^2, y^2, xy): G = [[2, a, 0],[a, 5, 0],[0, 0, -1-2a]] must be psd for
// some a; maximize slack t with G - tI psd.
TEST_CASE("SOS Gram feasibility for 2x^4+5y^4-x^2y^2") {
  SdpProblem p;
  p.add_block(3);
  Eigen::MatrixXd F0(3, 3);
  F0 << 2, 0, 0, 0, 5, 0, 0, 0, -1;
  p.set_F0(0, F0);
  int a = p.add_variable();  // Gram coupling x^2*y^2 split
  p.add_entry(a, 0, 0, 1, 1.0);
  p.add_entry(a, 0, 2, 2, -2.0);
  int t = p.add_variable();
  for (int i = 0; i < 3; ++i) p.add_entry(t, 0, i, i, -1.0);
  p.c = Eigen::VectorXd::Zero(2);
  p.c[1] = -1.0;  // maximize t
  auto sol = solve(p);
  REQUIRE(sol.status == SdpStatus::Optimal);
  CHECK(sol.y[1] > 1e-3);  // strictly feasible => p is SOS
  // recovered Gram reconstructs p and is psd
  Eigen::VectorXd y2 = sol.y;
  y2[1] = 0.0;  // drop the slack shift
  auto G = p.lmi_value(y2);
  CHECK(min_eig(G[0]) >= -1e-8);
  CHECK_THAT(G[0](0, 0), Catch::Matchers::WithinAbs(2.0, 1e-9));
  CHECK_THAT(G[0](1, 1), Catch::Matchers::WithinAbs(5.0, 1e-9));
  CHECK_THAT(2 * G[0](0, 1) + G[0](2, 2), Catch::Matchers::WithinAbs(-1.0, 1e-7));
}

TEST_CASE("equality constraints are honored") {
  // minimize y1 + y2 s.t. diag(y1, y2) psd, y1 + 2 y2 = 3
  SdpProblem p;
  p.add_block(2);
  int v1 = p.add_variable(), v2 = p.add_variable();
  p.add_entry(v1, 0, 0, 0, 1.0);
  p.add_entry(v2, 0, 1, 1, 1.0);
  p.c = Eigen::VectorXd::Ones(2);
  p.E = Eigen::MatrixXd(1, 2);
  p.E << 1.0, 2.0;
  p.d = Eigen::VectorXd(1);
  p.d << 3.0;
  auto sol = solve(p);
  REQUIRE(sol.status == SdpStatus::Optimal);
  CHECK_THAT(sol.y[0] + 2 * sol.y[1], Catch::Matchers::WithinAbs(3.0, 1e-7));
  // optimum puts everything on the cheaper variable: y = (0, 1.5)
  CHECK_THAT(sol.y[0], Catch::Matchers::WithinAbs(0.0, 1e-6));
  CHECK_THAT(sol.y[1], Catch::Matchers::WithinAbs(1.5, 1e-6));
}

TEST_CASE("infeasible LMI is flagged") {
  // y >= 1 and -y >= 1 simultaneously: infeasible
  SdpProblem p;
  p.add_block(1);
  p.add_block(1);
  p.F0[0](0, 0) = -1.0;
  p.F0[1](0, 0) = -1.0;
  int v = p.add_variable();
  p.add_entry(v, 0, 0, 0, 1.0);
  p.add_entry(v, 1, 0, 0, -1.0);
  auto sol = solve(p);
  CHECK(sol.status == SdpStatus::Infeasible);
}

TEST_CASE("non-symmetric coefficient input is rejected") {
  SdpProblem p;
  p.add_block(2);
  Eigen::MatrixXd ns(2, 2);
  ns << 0, 1, 0, 0;
  CHECK_THROWS(p.set_F0(0, ns));
  int v = p.add_variable();
  CHECK_THROWS(p.set_dense(v, 0, ns));
}

TEST_CASE("determinism and feasibility margin cross-check") {
  TestRng rng(5);
  // random feasible SDP: F0 = R R^T + small, couple of random symmetric A
  SdpProblem p;
  p.add_block(4);
  Eigen::MatrixXd R(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) R(i, j) = rng.uniform(-1, 1);
  p.set_F0(0, Eigen::MatrixXd(R * R.transpose()) +
                  0.1 * Eigen::MatrixXd::Identity(4, 4));
  for (int k = 0; k < 3; ++k) {
    int v = p.add_variable();
    Eigen::MatrixXd A(4, 4);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) A(i, j) = rng.uniform(-1, 1);
    p.set_dense(v, 0, Eigen::MatrixXd(0.5 * (A + A.transpose())));
  }
  p.c = Eigen::VectorXd(3);
  p.c << 1.0, -0.5, 0.25;

  auto s1 = solve(p);
  auto s2 = solve(p);
  REQUIRE(s1.status == SdpStatus::Optimal);
  CHECK((s1.y - s2.y).norm() <= 1e-9 * (1.0 + s1.y.norm()));

  // independently recompute F0 + sum y A and its min eigenvalue
  auto blocks = p.lmi_value(s1.y);
  double me = min_eig(blocks[0]);
  CHECK_THAT(me, Catch::Matchers::WithinAbs(s1.block_min_eig[0], 1e-12));
  CHECK(me >= -1e-8);

  // weak duality on the minimization problem
  CHECK(s1.dual_objective <= s1.objective + 1e-6);
}
