#include "doctest.h"

#include <random>

#include "asched/quadrature.hpp"
#include "asched/spline.hpp"

using namespace asched;

namespace {

// Textbook Cox-de Boor recursion, evaluated directly from the definition.
double cox_de_boor(const std::vector<double>& knots, int i, int p, double t, bool last_span) {
  if (p == 0) {
    if (knots[i] <= t && t < knots[i + 1]) return 1.0;
    // Right boundary belongs to the last non-empty span.
    return last_span && t == knots[i + 1] && knots[i] < knots[i + 1] && t == knots.back() ? 1.0 : 0.0;
  }
  double v = 0.0;
  const double d1 = knots[i + p] - knots[i];
  const double d2 = knots[i + p + 1] - knots[i + 1];
  if (d1 > 0) v += (t - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, t, last_span);
  if (d2 > 0) v += (knots[i + p + 1] - t) / d2 * cox_de_boor(knots, i + 1, p - 1, t, last_span);
  return v;
}

Eigen::VectorXd oracle_basis(const SplineBasis& basis, double t) {
  const auto knots = basis.knot_vector();
  Eigen::VectorXd out(basis.dimension());
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = cox_de_boor(knots, static_cast<int>(i), basis.degree, t, true);
  return out;
}

const SplineBasis kFixed{3, {0.1, 0.5, 4.0}, 0.0, 7.0};

}  // namespace

TEST_CASE("cubic basis at the lower boundary is the first unit vector") {
  const Eigen::VectorXd v = bspline_basis(0.0, kFixed);
  CHECK(v[0] == 1.0);
  CHECK(v.tail(v.size() - 1).cwiseAbs().maxCoeff() == 0.0);
  const Eigen::VectorXd w = bspline_basis(7.0, kFixed);
  CHECK(w[w.size() - 1] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("cubic basis at t = 2 matches the Cox-de Boor oracle") {
  const Eigen::VectorXd v = bspline_basis(2.0, kFixed);
  const Eigen::VectorXd o = oracle_basis(kFixed, 2.0);
  CHECK((v - o).cwiseAbs().maxCoeff() < 1e-12);
  // Frozen from tests/oracles/natural_spline_oracle.py (scipy design matrix).
  Eigen::VectorXd frozen(7);
  frozen << 0, 0, 0.14652014652014653, 0.58714232627276108, 0.24351419669145424, 0.022823330515638212, 0;
  CHECK((v - frozen).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("partition of unity and oracle agreement over random t") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 7.0);
  for (int degree : {0, 1, 2, 3}) {
    const SplineBasis basis{degree, {0.1, 0.5, 4.0}, 0.0, 7.0};
    for (int rep = 0; rep < 200; ++rep) {
      const double t = u(rng);
      const Eigen::VectorXd v = bspline_basis(t, basis);
      CHECK(std::abs(v.sum() - 1.0) < 1e-12);
      CHECK(v.minCoeff() >= 0.0);
      CHECK((v - oracle_basis(basis, t)).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("basis evaluation outside the boundary is a domain error") {
  CHECK_THROWS_AS(bspline_basis(-0.01, kFixed), DomainError);
  CHECK_THROWS_AS(bspline_basis(7.5, kFixed), DomainError);
  CHECK_THROWS_AS(bspline_basis_derivative(7.5, kFixed), DomainError);
}

TEST_CASE("basis derivatives") {
  SUBCASE("degree-0 basis has zero derivative") {
    const SplineBasis step{0, {1.0, 2.0}, 0.0, 3.0};
    CHECK(bspline_basis_derivative(1.5, step).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("finite-difference agreement at t = 2") {
    const double h = 1e-5;
    const Eigen::VectorXd fd = (bspline_basis(2.0 + h, kFixed) - bspline_basis(2.0 - h, kFixed)) / (2 * h);
    CHECK((bspline_basis_derivative(2.0, kFixed) - fd).cwiseAbs().maxCoeff() < 1e-6);
  }
  SUBCASE("derivatives sum to zero") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 7.0);
    for (int rep = 0; rep < 100; ++rep) CHECK(std::abs(bspline_basis_derivative(u(rng), kFixed).sum()) < 1e-10);
  }
}

TEST_CASE("natural spline basis matches the frozen reference values") {
  const NaturalSplineBasis fixed({0.1, 0.5, 4.0}, 0.0, 7.0);
  const NaturalSplineBasis random({0.1}, 0.0, 7.0);
  const std::vector<double> grid{0.05, 0.3, 2.0, 5.5, 7.0};
  // Frozen from tests/oracles/natural_spline_oracle.py.
  const double values[5][4] = {
      {0.00062500000000000012, -0.060999833360764727, 0.19316613897575496, -0.13216630561499021},
      {0.082974730583426221, -0.21066064250502589, 0.66944555869190325, -0.45804169805235473},
      {0.58714232627276108, 0.19617315423623607, 0.17273663162382899, -0.10257225865297262},
      {0.025083612040133776, 0.32796601155796112, 0.32431721758039167, 0.32263315882151333},
      {0, -0.1378091872791519, 0.43639575971731437, 0.70141342756183755}};
  const double slopes[5][4] = {
      {0.037500000000000006, -1.1723162537132523, 3.7123348034252994, -2.5400185497120464},
      {0.56962095875139351, -0.093851743248420841, 0.33250004834315056, -0.22750003307689243},
      {-0.044593088071348985, 0.26868270338098277, -0.11254751807757667, 0.10823812254816262},
      {-0.05016722408026756, -0.25310516799224742, 0.075747190280912799, 0.22752520179160216},
      {0, -0.33922261484098931, 0.074204946996466237, 0.26501766784452319}};
  const double rvalues[5][2] = {{0.017220396318045811, -0.0086592951653057006},
                                {0.09926717554827269, -0.048049856342807985},
                                {0.45700898055467559, -0.123098643558002},
                                {0.41493737303567757, 0.47232476008257368},
                                {0.23891178695602261, 0.87968471160488071}};
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Eigen::VectorXd v = fixed.values(grid[i]);
    const Eigen::VectorXd d = fixed.derivatives(grid[i]);
    const Eigen::VectorXd r = random.values(grid[i]);
    for (int j = 0; j < 4; ++j) {
      CHECK(v[j] == doctest::Approx(values[i][j]).epsilon(1e-12));
      CHECK(d[j] == doctest::Approx(slopes[i][j]).epsilon(1e-10));
    }
    for (int j = 0; j < 2; ++j) CHECK(r[j] == doctest::Approx(rvalues[i][j]).epsilon(1e-12));
  }
}

TEST_CASE("natural spline basis vanishes at the lower boundary and has no curvature at either boundary") {
  const NaturalSplineBasis ns({0.1, 0.5, 4.0}, 0.0, 7.0);
  CHECK(ns.values(0.0).cwiseAbs().maxCoeff() < 1e-15);
  const double h = 1e-4;
  for (double t : {h, 7.0 - h}) {
    const Eigen::VectorXd second = (ns.values(t + h) - 2 * ns.values(t) + ns.values(t - h)) / (h * h);
    CHECK(second.cwiseAbs().maxCoeff() < 1e-1);
  }
  // Away from the boundary the curvature is not small.
  const Eigen::VectorXd mid = (ns.values(5.5 + h) - 2 * ns.values(5.5) + ns.values(5.5 - h)) / (h * h);
  CHECK(mid.cwiseAbs().maxCoeff() > 1e-2);
}

TEST_CASE("time basis holds spline values constant beyond the boundary") {
  const TimeBasis tb = TimeBasis::natural({0.1}, 0.0, 7.0);
  Eigen::VectorXd v7(2), s7(2), v9(2), s9(2);
  tb.evaluate(7.0, v7, s7);
  tb.evaluate(9.0, v9, s9);
  CHECK((v7 - v9).cwiseAbs().maxCoeff() == 0.0);
  CHECK(s9.cwiseAbs().maxCoeff() == 0.0);
  CHECK(s7.cwiseAbs().maxCoeff() > 0.0);

  const TimeBasis bs = TimeBasis::bspline({1, {0.1}, 0.0, 7.0});
  CHECK(bs.size() == 2);
  Eigen::VectorXd v(2), s(2);
  bs.evaluate(0.05, v, s);
  CHECK(v[0] == doctest::Approx(0.5));
  CHECK(s[0] == doctest::Approx(10.0));
}

TEST_CASE("Gauss-Kronrod cumulative matrix integrates polynomials exactly") {
  const auto& a = GaussKronrod15::cumulative_matrix();
  const auto& x = GaussKronrod15::nodes();
  Eigen::Matrix<double, 15, 1> f;
  for (int i = 0; i < 15; ++i) f[i] = 3 * x[i] * x[i] - 2 * x[i] + 1;
  const Eigen::Matrix<double, 15, 1> cum = a * f;
  for (int i = 0; i < 15; ++i) {
    const double exact = (x[i] * x[i] * x[i] - x[i] * x[i] + x[i]) - (-1 - 1 - 1);
    CHECK(cum[i] == doctest::Approx(exact).epsilon(1e-12));
  }
}

TEST_CASE("Gauss-Kronrod cumulative row at arbitrary points") {
  const auto& x = GaussKronrod15::nodes();
  Eigen::Matrix<double, 15, 1> f;
  for (int i = 0; i < 15; ++i) f[i] = std::pow(x[i], 9) - 4 * x[i] * x[i];
  for (double p : {-1.0, -0.73, 0.0, 0.41, 1.0}) {
    const double exact = (std::pow(p, 10) - 1) / 10.0 - 4.0 / 3.0 * (p * p * p + 1);
    CHECK(GaussKronrod15::cumulative_row(p) * f == doctest::Approx(exact).epsilon(1e-12));
  }
  CHECK((GaussKronrod15::cumulative_row(x[6]) - GaussKronrod15::cumulative_matrix().row(6)).cwiseAbs().maxCoeff() <
        1e-13);
}

TEST_CASE("adaptive quadrature and fixed mesh") {
  const auto f = [](double t) { return 1.5 / 4.0 * std::sqrt(t / 4.0); };
  const double exact = std::pow(3.0 / 4.0, 1.5);
  CHECK(integrate(f, 0.0, 3.0) == doctest::Approx(exact).epsilon(1e-12));
  const std::vector<double> cuts{0.1, 0.5, 4.0, 7.0};
  const auto mesh = QuadratureMesh::build(0.0, 3.0, cuts);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < mesh.size(); ++i) sum += mesh.weights[i] * f(mesh.nodes[i]);
  CHECK(sum == doctest::Approx(exact).epsilon(1e-9));
  CHECK_THROWS_AS(integrate(f, 2.0, 1.0), DomainError);
}
