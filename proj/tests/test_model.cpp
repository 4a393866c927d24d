#include "doctest.h"

#include <random>

#include "asched/defaults.hpp"
#include "asched/model.hpp"

using namespace asched;

namespace {

Eigen::VectorXd random_vector(std::mt19937_64& rng, Eigen::Index n, double sd = 1.0) {
  std::normal_distribution<double> z(0.0, sd);
  Eigen::VectorXd v(n);
  for (auto& x : v) x = z(rng);
  return v;
}

// Natural spline block of the PRIAS fixed design at t = 2 (python oracle).
Eigen::Vector4d fixed_block_at_2() {
  return {0.58714232627276108, 0.19617315423623607, 0.17273663162382899, -0.10257225865297262};
}

}  // namespace

TEST_CASE("fixed design layout") {
  const ModelSpec spec = ModelSpec::prias();
  const Eigen::VectorXd x0 = psa_fixed_design(0.0, 70.0, spec);
  CHECK(x0.size() == 7);
  CHECK(x0[0] == 1.0);
  CHECK(x0[1] == 0.0);
  CHECK(x0[2] == 0.0);
  const Eigen::VectorXd x75 = psa_fixed_design(1.0, 75.0, spec);
  CHECK(x75[1] == 5.0);
  CHECK(x75[2] == 25.0);
  const Eigen::VectorXd x2 = psa_fixed_design(2.0, 70.0, spec);
  CHECK((x2.tail(4) - fixed_block_at_2()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("random design layout and continuity") {
  const ModelSpec spec = ModelSpec::prias();
  const Eigen::VectorXd z0 = psa_random_design(0.0, spec);
  CHECK(z0.size() == 3);
  CHECK(z0[0] == 1.0);
  CHECK(std::abs(z0[1]) < 1e-15);
  CHECK(std::abs(z0[2]) < 1e-15);
  for (double t = 0.0; t <= 10.0; t += 0.01) {
    const Eigen::VectorXd d = psa_random_design(t + 1e-6, spec) - psa_random_design(t, spec);
    CHECK(d.size() == 3);
    CHECK(d.cwiseAbs().maxCoeff() < 1e-4);
  }
}

TEST_CASE("longitudinal mean") {
  const ModelSpec spec = ModelSpec::prias();
  Theta theta = prias_posterior_means();
  const RandomEffects zero = Eigen::VectorXd::Zero(3);

  SUBCASE("published intercept at induction for a 70 year old") {
    CHECK(lmm_mean(0.0, 70.0, theta, zero, spec) == doctest::Approx(2.455).epsilon(1e-12));
  }
  SUBCASE("random intercept only") {
    theta.beta.setZero();
    const RandomEffects b = Eigen::Vector3d(1.7, 0.0, 0.0);
    for (double t : {0.0, 0.3, 2.0, 6.5, 9.0}) CHECK(lmm_mean(t, 64.0, theta, b, spec) == doctest::Approx(1.7));
  }
  SUBCASE("matches an explicit dot product and is linear in beta") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> ut(0.0, 7.0);
    for (int rep = 0; rep < 50; ++rep) {
      const double t = ut(rng);
      const double age = 60 + 20 * ut(rng) / 7.0;
      Theta th = theta;
      th.beta = random_vector(rng, 7);
      const RandomEffects b = random_vector(rng, 3);
      const auto x = psa_fixed_design(t, age, spec);
      const auto z = psa_random_design(t, spec);
      double oracle = 0.0;
      for (int i = 0; i < 7; ++i) oracle += x[i] * th.beta[i];
      for (int i = 0; i < 3; ++i) oracle += z[i] * b[i];
      CHECK(std::abs(lmm_mean(t, age, th, b, spec) - oracle) < 1e-12);

      Theta th2 = th;
      th2.beta = random_vector(rng, 7);
      Theta sum = th;
      sum.beta = th.beta + th2.beta;
      CHECK(std::abs(lmm_mean(t, age, sum, b, spec) -
                     (lmm_mean(t, age, th, b, spec) + lmm_mean(t, age, th2, zero, spec))) < 1e-12);
    }
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(lmm_mean(1.0, 70.0, theta, Eigen::VectorXd::Zero(2), spec), DomainError);
  }
}

TEST_CASE("longitudinal slope") {
  const ModelSpec spec = ModelSpec::prias();
  Theta theta = prias_posterior_means();
  std::mt19937_64 rng(9);
  const RandomEffects b = random_vector(rng, 3);

  SUBCASE("zero spline coefficients give zero slope") {
    Theta th = theta;
    th.beta.tail(4).setZero();
    CHECK(lmm_slope(2.0, 70.0, th, Eigen::Vector3d(0.4, 0.0, 0.0), spec) == 0.0);
  }
  SUBCASE("finite differences") {
    const double h = 1e-6;
    for (double t = 0.05; t < 6.9; t += 0.137) {
      const double fd = (lmm_mean(t + h, 70.0, theta, b, spec) - lmm_mean(t - h, 70.0, theta, b, spec)) / (2 * h);
      CHECK(std::abs(lmm_slope(t, 70.0, theta, b, spec) - fd) < 1e-6);
    }
  }
  SUBCASE("age does not enter the slope") {
    CHECK(lmm_slope(1.3, 55.0, theta, b, spec) == lmm_slope(1.3, 81.0, theta, b, spec));
  }
}

TEST_CASE("log baseline hazard") {
  CHECK(log_baseline_hazard(0.3, WeibullBaseline{1.0, 2.0}) == doctest::Approx(std::log(0.5)));
  CHECK(log_baseline_hazard(7.0, WeibullBaseline{1.0, 2.0}) == doctest::Approx(std::log(0.5)));
  CHECK(log_baseline_hazard(4.0, WeibullBaseline{1.5, 4.0}) == doctest::Approx(std::log(1.5 / 4.0)));

  PSplineBaseline ps;
  ps.basis = {3, {2.0, 4.0, 6.0}, 0.0, 8.0};
  ps.intercept = -1.25;
  ps.coefficients = Eigen::VectorXd::Zero(ps.basis.dimension());
  for (double t : {0.1, 3.0, 7.9}) CHECK(log_baseline_hazard(t, ps) == doctest::Approx(-1.25));

  CHECK_THROWS_AS(log_baseline_hazard(0.0, WeibullBaseline{}), DomainError);
  CHECK_THROWS_AS(log_baseline_hazard(-1.0, ps), DomainError);
}

TEST_CASE("hazard") {
  const Theta prias = prias_posterior_means();

  SUBCASE("unit increase in log2 PSA velocity multiplies the hazard by exp(alpha_2)") {
    const ModelSpec spec = ModelSpec::linear_trend();
    Theta theta;
    theta.beta = Eigen::Vector2d(2.4, 0.1);
    theta.gamma.resize(0);
    theta.alpha = prias.alpha;
    theta.sigma2 = 0.1;
    theta.D = Eigen::Matrix2d::Identity();
    theta.baseline = WeibullBaseline{1.5, 4.0};
    const double t = 2.5;
    const RandomEffects b = Eigen::Vector2d(0.2, -0.05);
    // Same level at t, slope raised by one.
    const RandomEffects b_up = Eigen::Vector2d(0.2 - t, 0.95);
    CHECK(lmm_mean(t, 70, theta, b_up, spec) == doctest::Approx(lmm_mean(t, 70, theta, b, spec)));
    const double ratio = hazard(t, 70, theta, b_up, spec) / hazard(t, 70, theta, b, spec);
    CHECK(ratio == doctest::Approx(std::exp(2.407)).epsilon(1e-12));
    CHECK(std::abs(ratio - 11.10) < 0.01);
  }

  SUBCASE("no association and no covariates gives the baseline hazard") {
    const ModelSpec spec = ModelSpec::prias();
    Theta theta = prias;
    theta.alpha.setZero();
    theta.gamma.setZero();
    const RandomEffects b = Eigen::Vector3d(0.3, -1.0, 2.0);
    for (double t : {0.2, 1.0, 5.0, 12.0})
      CHECK(hazard(t, 63.0, theta, b, spec) == doctest::Approx(std::exp(log_baseline_hazard(t, theta.baseline))));
  }

  SUBCASE("matches an independent formula evaluation") {
    const ModelSpec spec = ModelSpec::prias();
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> ut(0.01, 9.0);
    for (int rep = 0; rep < 50; ++rep) {
      Theta theta = prias;
      theta.beta = random_vector(rng, 7, 0.3);
      theta.gamma = random_vector(rng, 2, 0.05);
      theta.alpha = random_vector(rng, 2, 0.5);
      const RandomEffects b = random_vector(rng, 3, 0.5);
      const double t = ut(rng), age = 55.0 + 3.0 * ut(rng);
      const auto& w = std::get<WeibullBaseline>(theta.baseline);
      const double h0 = w.shape / w.scale * std::pow(t / w.scale, w.shape - 1.0);
      const double a = age - 70.0;
      const double m = psa_fixed_design(t, age, spec).dot(theta.beta) + psa_random_design(t, spec).dot(b);
      const double slope = lmm_slope(t, age, theta, b, spec);
      const double oracle =
          h0 * std::exp(theta.gamma[0] * a + theta.gamma[1] * a * a + theta.alpha[0] * m + theta.alpha[1] * slope);
      CHECK(hazard(t, age, theta, b, spec) == doctest::Approx(oracle).epsilon(1e-12));
      CHECK(hazard(t, age, theta, b, spec) > 0.0);
    }
  }

  SUBCASE("shifting the log baseline scales the hazard uniformly") {
    const ModelSpec spec = ModelSpec::prias();
    PSplineBaseline ps;
    ps.basis = {3, {5.0, 10.0}, 0.0, 20.0};
    ps.coefficients = Eigen::VectorXd::LinSpaced(ps.basis.dimension(), -1.0, 0.5);
    Theta a = prias, b = prias;
    a.baseline = ps;
    ps.intercept += 0.7;
    b.baseline = ps;
    const RandomEffects re = Eigen::Vector3d(0.1, 0.2, -0.3);
    for (double t : {0.5, 3.0, 11.0})
      CHECK(hazard(t, 70, b, re, spec) / hazard(t, 70, a, re, spec) == doctest::Approx(std::exp(0.7)));
  }

  SUBCASE("ValueOnly ignores the slope term") {
    ModelSpec spec = ModelSpec::prias();
    spec.functional_form = FunctionalForm::ValueOnly;
    Theta theta = prias;
    theta.alpha = Eigen::VectorXd::Constant(1, 0.5);
    const RandomEffects b = Eigen::Vector3d(0.1, 0.2, -0.3);
    const double expected = std::exp(log_baseline_hazard(2.0, theta.baseline) +
                                     theta.gamma.dot(baseline_covariates(70.0, spec)) +
                                     0.5 * lmm_mean(2.0, 70.0, theta, b, spec));
    CHECK(hazard(2.0, 70.0, theta, b, spec) == doctest::Approx(expected));
  }
}

TEST_CASE("patient history invariants and derived interval") {
  PatientHistory h{"p1", 68.0, {{0.0, 4.0}, {0.5, 4.4}}, {{1.0, false}, {4.0, true}}};
  CHECK_NOTHROW(h.validate());
  CHECK(derive_interval(h) == CensoringInterval{1.0, 4.0});
  h.biopsies = {{1.0, false}};
  CHECK(derive_interval(h) == CensoringInterval{1.0, kInfinity});
  h.biopsies.clear();
  CHECK(derive_interval(h) == CensoringInterval{0.0, kInfinity});
  h.biopsies = {{2.0, true}};
  CHECK(derive_interval(h) == CensoringInterval{0.0, 2.0});

  PatientHistory bad = h;
  bad.psa = {{0.0, 4.0}, {0.0, 4.2}};
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad = h;
  bad.psa = {{0.0, -1.0}};
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad = h;
  bad.biopsies = {{1.0, true}, {2.0, false}};
  CHECK_THROWS_AS(bad.validate(), DataError);
}

TEST_CASE("theta validation") {
  const ModelSpec spec = ModelSpec::prias();
  Theta theta = prias_posterior_means();
  CHECK_NOTHROW(validate(theta, spec));
  theta.D(0, 0) = -1.0;
  CHECK_THROWS_AS(validate(theta, spec), DomainError);
  theta = prias_posterior_means();
  theta.sigma2 = 0.0;
  CHECK_THROWS_AS(validate(theta, spec), DomainError);
  theta = prias_posterior_means();
  theta.alpha = Eigen::VectorXd::Zero(1);
  CHECK_THROWS_AS(validate(theta, spec), DomainError);
}
