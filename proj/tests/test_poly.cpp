#include "gsf/poly.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "test_rng.hpp"

using gsf::poly::MonomialBasis;
using gsf::poly::Polynomial;
using gsf::poly::TrigKind;
using gsf::poly::taylor_trig;

namespace {

Polynomial var(const std::string& n) { return Polynomial::variable(n); }

Polynomial random_poly(TestRng& rng, const std::vector<std::string>& vars,
                       int max_deg, int nterms) {
  Polynomial p;
  for (int t = 0; t < nterms; ++t) {
    Polynomial term = Polynomial::constant(rng.uniform(-2.0, 2.0));
    int deg = rng.uniform_int(0, max_deg);
    for (int d = 0; d < deg; ++d)
      term *= var(vars[rng.uniform_int(0, int(vars.size()) - 1)]);
    p += term;
  }
  return p;
}

}  // namespace

TEST_CASE("evaluate basics") {
  Polynomial p = var("x") * var("x") + var("y") * var("y");
  CHECK(p.evaluate({{"x", 0.0}, {"y", 0.0}}) == 0.0);
  CHECK(p.evaluate({{"x", 3.0}, {"y", 4.0}}) == 25.0);

  Polynomial q = Polynomial::constant(1.0) - 2.43 * (var("x") * var("y"));
  CHECK_THAT(q.evaluate({{"x", 1.0}, {"y", 0.5}}),
             Catch::Matchers::WithinAbs(-0.215, 1e-15));
}

TEST_CASE("evaluate reports missing variables") {
  Polynomial p = var("x") + var("omega2");
  CHECK_THROWS_WITH(p.evaluate({{"x", 1.0}}),
                    Catch::Matchers::ContainsSubstring("omega2"));
}

TEST_CASE("gradient basics") {
  Polynomial p = var("x") * var("x") + var("y") * var("y");
  auto g = p.gradient();
  REQUIRE(g.size() == 2);
  CHECK((g[0] - 2.0 * var("x")).is_zero());
  CHECK((g[1] - 2.0 * var("y")).is_zero());

  auto gc = Polynomial::constant(5.0).gradient();
  for (const auto& c : gc) CHECK(c.is_zero());

  Polynomial q = var("x").pow(3) * var("y");
  auto gq = q.gradient();
  CHECK((gq[0] - 3.0 * var("x").pow(2) * var("y")).is_zero());
  CHECK((gq[1] - var("x").pow(3)).is_zero());
}

TEST_CASE("arithmetic basics") {
  Polynomial x = var("x");
  CHECK(((x + 1.0) * (x - 1.0) - (x * x - 1.0)).is_zero());
  CHECK(((x * x).shift("x", 1.0) - (x * x + 2.0 * x + 1.0)).is_zero());
  Polynomial z = 0.0 * (x * x + 3.0 * x);
  CHECK(z.is_zero());
  CHECK(z.terms().empty());
}

TEST_CASE("no zero coefficients survive normalization") {
  Polynomial x = var("x");
  Polynomial p = (x + 1.0) - x - 1.0 + x * x - x * x;
  CHECK(p.terms().empty());
}

TEST_CASE("taylor_trig") {
  Polynomial s3 = taylor_trig(TrigKind::Sin, 0.0, 3);
  Polynomial x = var("x");
  CHECK((s3 - (x - (1.0 / 6.0) * x.pow(3))).max_abs_coeff() < 1e-15);

  Polynomial c2 = taylor_trig(TrigKind::Cos, 0.0, 2);
  CHECK((c2 - (Polynomial::constant(1.0) - 0.5 * x * x)).max_abs_coeff() < 1e-15);

  // sin about pi/6, degree 1: 0.5 + (sqrt(3)/2) x
  Polynomial s1 = taylor_trig(TrigKind::Sin, M_PI / 6.0, 1);
  CHECK_THAT(s1.coeff({}), Catch::Matchers::WithinAbs(0.5, 1e-15));
  CHECK_THAT(s1.coeff({{"x", 1}}),
             Catch::Matchers::WithinAbs(std::sqrt(3.0) / 2.0, 1e-15));

  CHECK_THROWS(taylor_trig(TrigKind::Sin, 0.0, 0));
}

TEST_CASE("taylor_trig converges to the trig value") {
  TestRng rng(7);
  for (int i = 0; i < 20; ++i) {
    double c = rng.uniform(-1.0, 1.0), d = rng.uniform(-0.05, 0.05);
    Polynomial s = taylor_trig(TrigKind::Sin, c, 7);
    CHECK_THAT(s.evaluate({{"x", d}}),
               Catch::Matchers::WithinAbs(std::sin(c + d), 1e-12));
  }
}

TEST_CASE("product evaluation property") {
  TestRng rng(11);
  std::vector<std::string> vars{"x", "y", "z"};
  for (int rep = 0; rep < 50; ++rep) {
    Polynomial p = random_poly(rng, vars, 3, 6);
    Polynomial q = random_poly(rng, vars, 3, 6);
    std::map<std::string, double> pt{{"x", rng.uniform(-2, 2)},
                                     {"y", rng.uniform(-2, 2)},
                                     {"z", rng.uniform(-2, 2)}};
    double lhs = (p * q).evaluate(pt);
    double rhs = p.evaluate(pt) * q.evaluate(pt);
    CHECK_THAT(lhs, Catch::Matchers::WithinRel(rhs, 1e-10) ||
                        Catch::Matchers::WithinAbs(rhs, 1e-10));
  }
}

TEST_CASE("gradient matches central finite differences") {
  TestRng rng(13);
  std::vector<std::string> vars{"x", "y"};
  const double h = 1e-5;
  for (int rep = 0; rep < 30; ++rep) {
    Polynomial p = random_poly(rng, vars, 4, 8);
    std::map<std::string, double> pt{{"x", rng.uniform(-1, 1)},
                                     {"y", rng.uniform(-1, 1)}};
    auto g = p.gradient();
    for (size_t k = 0; k < p.variables().size(); ++k) {
      auto hi = pt, lo = pt;
      hi[p.variables()[k]] += h;
      lo[p.variables()[k]] -= h;
      double fd = (p.evaluate(hi) - p.evaluate(lo)) / (2 * h);
      double an = g[k].evaluate(pt);
      CHECK_THAT(an, Catch::Matchers::WithinRel(fd, 1e-6) ||
                         Catch::Matchers::WithinAbs(fd, 1e-6));
    }
  }
}

TEST_CASE("shift then evaluate equals evaluate at shifted point") {
  TestRng rng(17);
  std::vector<std::string> vars{"x", "y"};
  for (int rep = 0; rep < 30; ++rep) {
    Polynomial p = random_poly(rng, vars, 4, 8);
    double x0 = rng.uniform(-1, 1);
    double xv = rng.uniform(-1, 1), yv = rng.uniform(-1, 1);
    double lhs = p.shift("x", x0).evaluate({{"x", xv}, {"y", yv}});
    double rhs = p.evaluate({{"x", xv + x0}, {"y", yv}});
    CHECK_THAT(lhs, Catch::Matchers::WithinRel(rhs, 1e-10) ||
                        Catch::Matchers::WithinAbs(rhs, 1e-10));
  }
}

TEST_CASE("degree is additive under multiplication") {
  TestRng rng(19);
  std::vector<std::string> vars{"x", "y"};
  for (int rep = 0; rep < 20; ++rep) {
    Polynomial p = random_poly(rng, vars, 3, 5) + var("x").pow(3);
    Polynomial q = random_poly(rng, vars, 2, 5) + var("y").pow(2);
    CHECK((p * q).degree() == p.degree() + q.degree());
  }
}

TEST_CASE("monomial basis size and ordering") {
  auto b = MonomialBasis::up_to_degree(3, 4);
  CHECK(b.size() == size_t(gsf::poly::binomial(7, 4)));  // C(3+4,4) = 35
  for (size_t i = 1; i < b.monomials.size(); ++i)
    CHECK(gsf::poly::grlex_less(b.monomials[i - 1], b.monomials[i]));
  // repeated construction is identical
  auto b2 = MonomialBasis::up_to_degree(3, 4);
  CHECK(b.monomials == b2.monomials);
}

TEST_CASE("text render/parse round trip") {
  TestRng rng(23);
  std::vector<std::string> vars{"x1", "x2", "om_3"};
  for (int rep = 0; rep < 30; ++rep) {
    Polynomial p = random_poly(rng, vars, 4, 7);
    Polynomial q = Polynomial::parse(p.to_string());
    CHECK((p - q).max_abs_coeff() < 1e-14);
  }
  Polynomial lit = Polynomial::parse("1.5*x1^2*x2 - 0.3");
  CHECK(lit.coeff({{"x1", 2}, {"x2", 1}}) == 1.5);
  CHECK(lit.coeff({}) == -0.3);
  CHECK(Polynomial::parse("0").is_zero());
  CHECK_THROWS(Polynomial::parse("1.5 $ x"));
}

TEST_CASE("evaluator matches evaluate") {
  TestRng rng(29);
  std::vector<std::string> vars{"a", "b", "c"};
  Polynomial p = random_poly(rng, vars, 4, 10);
  gsf::poly::Evaluator ev(p, vars);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> x{rng.uniform(-2, 2), rng.uniform(-2, 2),
                          rng.uniform(-2, 2)};
    double ref = p.evaluate({{"a", x[0]}, {"b", x[1]}, {"c", x[2]}});
    CHECK_THAT(ev(x), Catch::Matchers::WithinRel(ref, 1e-12) ||
                          Catch::Matchers::WithinAbs(ref, 1e-12));
  }
}
