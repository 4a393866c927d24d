#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include "asched/defaults.hpp"
#include "asched/inference.hpp"

using namespace asched;

namespace {

const double kPi = 3.14159265358979323846;

double normal_pdf_log(double x, double mean, double sd) {
  return std::log(std::exp(-0.5 * (x - mean) * (x - mean) / (sd * sd)) / (sd * std::sqrt(2 * kPi)));
}

Theta exponential_theta(double rate) {
  Theta theta;
  theta.beta = Eigen::Vector2d(2.0, 0.1);
  theta.gamma.resize(0);
  theta.alpha = Eigen::Vector2d::Zero();
  theta.sigma2 = 0.09;
  theta.D = Eigen::Matrix2d::Identity();
  theta.baseline = WeibullBaseline{1.0, 1.0 / rate};
  return theta;
}

PatientHistory small_history(std::mt19937_64& rng, const std::string& id, double age, int n) {
  std::normal_distribution<double> z(0.0, 0.3);
  PatientHistory h{id, age, {}, {}};
  for (int i = 0; i < n; ++i) h.psa.push_back({0.5 * i, std::exp2(2.0 + 0.1 * 0.5 * i + z(rng))});
  return h;
}

}  // namespace

TEST_CASE("longitudinal log-likelihood") {
  const ModelSpec spec = ModelSpec::linear_trend();
  Theta theta = exponential_theta(0.5);
  const RandomEffects zero = Eigen::Vector2d::Zero();

  SUBCASE("zero residuals") {
    PatientHistory h{"a", 70, {}, {}};
    for (double t : {0.0, 1.0, 2.5}) h.psa.push_back({t, std::exp2(2.0 + 0.1 * t)});
    CHECK(long_loglik(h, theta, zero, spec) == doctest::Approx(3 * (-0.5 * std::log(2 * kPi * 0.09))));
  }
  SUBCASE("single residual of one standard deviation") {
    PatientHistory h{"a", 70, {{1.0, std::exp2(2.1 + 0.3)}}, {}};
    CHECK(long_loglik(h, theta, zero, spec) == doctest::Approx(-0.5 * std::log(2 * kPi * 0.09) - 0.5));
  }
  SUBCASE("random patients against per-point log densities") {
    std::mt19937_64 rng(1);
    const ModelSpec prias = ModelSpec::prias();
    Theta t2 = prias_posterior_means();
    std::normal_distribution<double> z;
    for (int rep = 0; rep < 20; ++rep) {
      const PatientHistory h = small_history(rng, "r", 60 + rep, 1 + rep % 7);
      const RandomEffects b = Eigen::Vector3d(z(rng), z(rng), z(rng)) * 0.5;
      double oracle = 0.0;
      for (const auto& m : h.psa)
        oracle += normal_pdf_log(std::log2(m.psa), lmm_mean(m.time, h.age_at_entry, t2, b, prias), std::sqrt(t2.sigma2));
      CHECK(std::abs(long_loglik(h, t2, b, prias) - oracle) < 1e-10);
    }
  }
  SUBCASE("errors") {
    PatientHistory empty{"e", 70, {}, {}};
    CHECK_THROWS_AS(long_loglik(empty, theta, zero, spec), DataError);
    PatientHistory bad{"e", 70, {{0.0, std::numeric_limits<double>::infinity()}}, {}};
    CHECK_THROWS_AS(long_loglik(bad, theta, zero, spec), DataError);
  }
}

TEST_CASE("cumulative hazard") {
  const ModelSpec spec = ModelSpec::prias();
  Theta theta = prias_posterior_means();
  theta.alpha.setZero();
  theta.gamma.setZero();
  const RandomEffects b = Eigen::Vector3d(0.2, 0.5, -0.4);

  SUBCASE("Weibull closed form for the three subgroups") {
    for (int g = 0; g < 3; ++g) {
      theta.baseline = prias_subgroup_baseline(g);
      const auto w = std::get<WeibullBaseline>(theta.baseline);
      for (double t : {0.1, 0.5, 1.0, 2.7, 7.0, 15.0}) {
        const double exact = std::pow(t / w.scale, w.shape);
        CHECK(std::abs(cumulative_hazard(72.0, theta, b, spec, 0.0, t) / exact - 1.0) < 1e-8);
      }
    }
  }
  SUBCASE("exponential and empty interval") {
    theta.baseline = WeibullBaseline{1.0, 2.0};
    CHECK(std::abs(cumulative_hazard(70.0, theta, b, spec, 0.0, 4.0) - 2.0) < 1e-10);
    CHECK(cumulative_hazard(70.0, theta, b, spec, 3.0, 3.0) == 0.0);
    CHECK_THROWS_AS(cumulative_hazard(70.0, theta, b, spec, 3.0, 2.0), DomainError);
  }
  SUBCASE("additivity with the full model") {
    const Theta full = prias_posterior_means();
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 12.0);
    for (int rep = 0; rep < 20; ++rep) {
      double t[3] = {u(rng), u(rng), u(rng)};
      std::sort(t, t + 3);
      const double whole = cumulative_hazard(66.0, full, b, spec, t[0], t[2]);
      const double parts = cumulative_hazard(66.0, full, b, spec, t[0], t[1]) +
                           cumulative_hazard(66.0, full, b, spec, t[1], t[2]);
      CHECK(whole >= 0.0);
      CHECK(std::abs(whole - parts) <= 1e-9 * std::max(whole, 1e-300));
    }
  }
}

TEST_CASE("interval-censored survival likelihood") {
  const ModelSpec spec = ModelSpec::linear_trend();
  const Theta theta = exponential_theta(0.5);
  const RandomEffects b = Eigen::Vector2d(0.1, 0.2);

  CHECK(surv_loglik_interval({0.0, 3.0}, 70, theta, b, spec) == doctest::Approx(std::log(1 - std::exp(-1.5))));
  CHECK(surv_loglik_interval({2.0, kInfinity}, 70, theta, b, spec) == doctest::Approx(-1.0));
  CHECK(surv_loglik_interval({1.0, 2.0}, 70, theta, b, spec) ==
        doctest::Approx(std::log(std::exp(-0.5) - std::exp(-1.0))).epsilon(1e-12));
  CHECK(surv_loglik_interval({2.0, 2.0}, 70, theta, b, spec) == doctest::Approx(std::log(0.5) - 1.0));
  CHECK(surv_loglik_interval({1.0, 2.0}, 70, theta, b, spec) <= 0.0);

  SUBCASE("probabilities telescope") {
    const ModelSpec prias = ModelSpec::prias();
    const Theta full = prias_posterior_means();
    const RandomEffects b3 = Eigen::Vector3d(0.3, -0.2, 0.4);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.05, 12.0);
    for (int rep = 0; rep < 20; ++rep) {
      double t[3] = {u(rng), u(rng), u(rng)};
      std::sort(t, t + 3);
      const double lhs = std::exp(surv_loglik_interval({t[0], t[1]}, 68, full, b3, prias)) +
                         std::exp(surv_loglik_interval({t[1], t[2]}, 68, full, b3, prias)) +
                         std::exp(-cumulative_hazard(68, full, b3, prias, 0.0, t[2]));
      CHECK(std::abs(lhs - std::exp(-cumulative_hazard(68, full, b3, prias, 0.0, t[0]))) < 1e-9);
    }
  }
}

TEST_CASE("random-effects prior") {
  CHECK(ranef_logprior(Eigen::Vector3d::Zero(), Eigen::Matrix3d::Identity()) == doctest::Approx(-1.5 * std::log(2 * kPi)));
  const Eigen::Vector3d b(0.3, -1.2, 2.0);
  CHECK(ranef_logprior(b, Eigen::Matrix3d::Identity()) ==
        doctest::Approx(-0.5 * b.squaredNorm() - 1.5 * std::log(2 * kPi)));
  std::mt19937_64 rng(2);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::Matrix3d a;
    for (auto& x : a.reshaped()) x = z(rng);
    const Eigen::Matrix3d d = a * a.transpose() + 0.2 * Eigen::Matrix3d::Identity();
    const Eigen::Vector3d v(z(rng), z(rng), z(rng));
    const double oracle = -0.5 * v.dot(d.fullPivLu().inverse() * v) - 0.5 * std::log(std::pow(2 * kPi, 3) * d.determinant());
    CHECK(std::abs(ranef_logprior(v, d) - oracle) < 1e-10);
  }
  Eigen::Matrix3d bad = Eigen::Matrix3d::Identity();
  bad(2, 2) = -1;
  CHECK_THROWS_AS(ranef_logprior(b, bad), DomainError);
}

TEST_CASE("parameter prior") {
  const PriorConfig priors;
  Theta theta = prias_posterior_means();

  SUBCASE("beta at zero contributes its normalizing constant") {
    Theta a = theta, c = theta;
    a.beta.setZero();
    c.beta.setZero();
    c.beta[0] = 1.0;
    CHECK(theta_logprior(a, priors) - theta_logprior(c, priors) == doctest::Approx(0.5 / 100.0));
  }
  SUBCASE("P-spline with zero coefficients keeps only the smoothing-parameter power term") {
    PSplineBaseline ps;
    ps.basis = {3, {2, 4, 6, 8}, 0, 10};
    ps.coefficients = Eigen::VectorXd::Zero(ps.basis.dimension());
    Theta a = theta;
    a.baseline = ps;
    a.hyper.tau_h = 1.0;
    Theta c = a;
    c.hyper.tau_h = std::exp(1.0);
    const int rank = static_cast<int>(ps.basis.dimension()) - 2;
    // tau_h^{rho/2} and the Gamma(1, 0.005) density in tau_h
    CHECK(theta_logprior(c, priors) - theta_logprior(a, priors) ==
          doctest::Approx(0.5 * rank - 0.005 * (std::exp(1.0) - 1.0)));
  }
  SUBCASE("term-by-term oracle") {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> z;
    std::uniform_real_distribution<double> u(0.2, 3.0);
    for (int rep = 0; rep < 10; ++rep) {
      Theta t = theta;
      for (auto& x : t.beta) x = z(rng);
      for (auto& x : t.gamma) x = 0.1 * z(rng);
      for (auto& x : t.alpha) x = z(rng);
      t.sigma2 = u(rng);
      Eigen::Matrix3d a;
      for (auto& x : a.reshaped()) x = z(rng);
      t.D = a * a.transpose() + 0.3 * Eigen::Matrix3d::Identity();
      t.hyper.tau_gamma = u(rng);
      t.hyper.tau_alpha = u(rng);
      t.hyper.psi_gamma = Eigen::Vector2d(u(rng), u(rng));
      t.hyper.psi_alpha = Eigen::Vector2d(u(rng), u(rng));
      t.baseline = WeibullBaseline{u(rng), u(rng)};

      double oracle = 0.0;
      for (double x : t.beta) oracle += normal_pdf_log(x, 0.0, 10.0);
      oracle += 0.01 * std::log(0.01) - std::lgamma(0.01) - 1.01 * std::log(t.sigma2) - 0.01 / t.sigma2;
      const double q = 3, nu = 3;
      double lmg = q * (q - 1) / 4 * std::log(kPi);
      for (int j = 0; j < 3; ++j) lmg += std::lgamma(nu / 2 - j / 2.0);
      oracle += -nu * q / 2 * std::log(2.0) - lmg - (nu + q + 1) / 2 * std::log(t.D.determinant()) -
                0.5 * t.D.fullPivLu().inverse().trace();
      const auto gamma_log = [](double x, double a, double r) {
        return a * std::log(r) - std::lgamma(a) + (a - 1) * std::log(x) - r * x;
      };
      const auto ridge = [&](const Eigen::VectorXd& x, double tau, const Eigen::VectorXd& psi) {
        double s = gamma_log(1 / tau, 0.1, 0.1);
        for (int k = 0; k < x.size(); ++k)
          s += normal_pdf_log(x[k], 0.0, std::sqrt(tau * psi[k])) + gamma_log(1 / psi[k], 1.0, 0.01);
        return s;
      };
      oracle += ridge(t.gamma, t.hyper.tau_gamma, t.hyper.psi_gamma) + ridge(t.alpha, t.hyper.tau_alpha, t.hyper.psi_alpha);
      const auto w = std::get<WeibullBaseline>(t.baseline);
      oracle += normal_pdf_log(std::log(w.shape), 0, 10) + normal_pdf_log(std::log(w.scale), 0, 10);
      CHECK(std::abs(theta_logprior(t, priors) - oracle) < 1e-9);
    }
  }
}

TEST_CASE("penalty matrix") {
  const PenaltyMatrix p = PenaltyMatrix::build(6, 2, 1e-6);
  CHECK(p.rank == 4);
  CHECK(p.K.isApprox(p.K.transpose()));
  const Eigen::VectorXd linear = Eigen::VectorXd::LinSpaced(6, 0.0, 5.0);
  CHECK(linear.dot(p.K * linear) == doctest::Approx(1e-6 * linear.squaredNorm()));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(p.K);
  CHECK(eig.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("log posterior") {
  const ModelSpec spec = ModelSpec::prias();
  const PriorConfig priors;
  const Theta theta = prias_posterior_means();
  std::mt19937_64 rng(3);
  PatientHistory h = small_history(rng, "p", 71, 6);
  h.biopsies = {{1.0, false}, {2.5, true}};
  const Dataset one = Dataset::from_histories({h});
  const RandomEffects b = Eigen::Vector3d(0.1, 0.2, -0.1);
  const double parts = long_loglik(h, theta, b, spec) + surv_loglik_interval({1.0, 2.5}, 71, theta, b, spec) +
                       ranef_logprior(b, theta.D) + theta_logprior(theta, priors);
  CHECK(log_posterior(theta, {b}, one, spec, priors) == doctest::Approx(parts).epsilon(1e-12));

  const Dataset two = Dataset::from_histories({h, h});
  const double prior = theta_logprior(theta, priors);
  CHECK(log_posterior(theta, {b, b}, two, spec, priors) - prior ==
        doctest::Approx(2 * (parts - prior)).epsilon(1e-12));

  SUBCASE("a wildly wrong residual variance lowers the posterior") {
    Theta wrong = theta;
    wrong.sigma2 = 50.0;
    CHECK(log_posterior(wrong, {b}, one, spec, priors) < log_posterior(theta, {b}, one, spec, priors));
    wrong.sigma2 = 1e-4;
    CHECK(log_posterior(wrong, {b}, one, spec, priors) < log_posterior(theta, {b}, one, spec, priors));
  }
}

TEST_CASE("sampler reproduces the conjugate Gaussian posterior of beta") {
  // Linear mixed model with known sigma2 and D: beta | y is Gaussian with
  // precision sum X' V^-1 X + I/100 where V = Z D Z' + sigma2 I.
  const ModelSpec spec = ModelSpec::linear_trend();
  const double sigma2 = 0.25;
  Eigen::Matrix2d d;
  d << 0.5, 0.05, 0.05, 0.1;
  std::mt19937_64 rng(21);
  std::normal_distribution<double> z;
  Dataset data;
  for (int i = 0; i < 30; ++i) {
    const double b0 = std::sqrt(0.5) * z(rng), b1 = std::sqrt(0.1) * z(rng);
    PatientHistory h{"p" + std::to_string(i), 70, {}, {}};
    for (int k = 0; k < 4 + i % 3; ++k) {
      const double t = 0.5 * k;
      h.psa.push_back({t, std::exp2(1.5 + 0.2 * t + b0 + b1 * t + 0.5 * z(rng))});
    }
    data.patients.push_back({h, {0.0, kInfinity}});
  }
  Eigen::Matrix2d prec = Eigen::Matrix2d::Identity() / 100.0;
  Eigen::Vector2d rhs = Eigen::Vector2d::Zero();
  for (const auto& p : data.patients) {
    const auto n = static_cast<Eigen::Index>(p.history.psa.size());
    Eigen::MatrixXd x(n, 2);
    Eigen::VectorXd y(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      x.row(k) << 1.0, p.history.psa[k].time;
      y[k] = std::log2(p.history.psa[k].psa);
    }
    const Eigen::MatrixXd v = x * d * x.transpose() + sigma2 * Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd vinv = v.inverse();
    prec += x.transpose() * vinv * x;
    rhs += x.transpose() * vinv * y;
  }
  const Eigen::Vector2d exact = prec.inverse() * rhs;

  McmcConfig cfg;
  cfg.chains = 2;
  cfg.iterations = 3000;
  cfg.burn_in = 200;
  cfg.thin = 1;
  cfg.seed = 5;
  cfg.baseline = BaselineKind::Weibull;
  cfg.survival = false;
  cfg.fixed_sigma2 = sigma2;
  cfg.fixed_D = Eigen::MatrixXd(d);
  const PosteriorSamples post = run_mcmc(data, spec, PriorConfig{}, cfg);
  REQUIRE(post.size() == 2 * 2800);
  for (int j = 0; j < 2; ++j) {
    Eigen::MatrixXd chains(2800, 2);
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < 2800; ++i) chains(i, c) = post.draws[c * 2800 + i].theta.beta[j];
    const double mean = chains.mean();
    const double var = (chains.array() - mean).square().sum() / (chains.size() - 1);
    const double se = std::sqrt(var / effective_sample_size(chains));
    CHECK(std::abs(mean - exact[j]) < 2 * se);
    CHECK(var == doctest::Approx(prec.inverse()(j, j)).epsilon(0.15));
  }
}

TEST_CASE("sampler is deterministic for a fixed seed and fits a survival model") {
  const ModelSpec spec = ModelSpec::linear_trend();
  std::mt19937_64 rng(31);
  std::vector<PatientHistory> hs;
  for (int i = 0; i < 25; ++i) {
    PatientHistory h = small_history(rng, "p" + std::to_string(i), 70, 5);
    h.biopsies = {{1.0, false}};
    if (i % 3 == 0) h.biopsies.push_back({2.0 + 0.1 * i, true});
    else h.biopsies.push_back({2.0 + 0.1 * i, false});
    hs.push_back(h);
  }
  const Dataset data = Dataset::from_histories(hs);
  McmcConfig cfg;
  cfg.chains = 2;
  cfg.iterations = 300;
  cfg.burn_in = 100;
  cfg.thin = 2;
  cfg.seed = 77;
  cfg.pspline_knots = 5;
  const PosteriorSamples a = run_mcmc(data, spec, PriorConfig{}, cfg);
  const PosteriorSamples b = run_mcmc(data, spec, PriorConfig{}, cfg);
  REQUIRE(a.size() == 200);
  REQUIRE(b.size() == 200);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Eigen::VectorXd x = flatten(a.draws[i].theta), y = flatten(b.draws[i].theta);
    CHECK(x.size() == y.size());
    CHECK(std::memcmp(x.data(), y.data(), sizeof(double) * x.size()) == 0);
    CHECK(a.draws[i].b.size() == data.size());
  }
  for (const auto& draw : a.draws) CHECK_NOTHROW(validate(draw.theta, spec));
  REQUIRE(a.diagnostics.rhat.size() == static_cast<Eigen::Index>(a.diagnostics.names.size()));
  for (const auto& [name, rate] : a.diagnostics.acceptance) {
    INFO(name);
    CHECK(rate > 0.02);
  }
}

TEST_CASE("convergence diagnostics") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> z;
  Eigen::MatrixXd iid(2000, 4);
  for (auto& x : iid.reshaped()) x = z(rng);
  CHECK(rhat(iid) == doctest::Approx(1.0).epsilon(0.05));
  CHECK(effective_sample_size(iid) > 4000);
  CHECK(effective_sample_size(iid) <= 8000);

  const Eigen::MatrixXd constant = Eigen::MatrixXd::Constant(500, 1, 3.0);
  CHECK(effective_sample_size(constant) == doctest::Approx(1.0));

  Eigen::MatrixXd apart = iid.leftCols(2);
  apart.col(0).array() += 10.0;
  apart.col(1).array() -= 10.0;
  CHECK(rhat(apart) > 2.0);
  CHECK_THROWS_AS(rhat(iid.leftCols(1)), UsageError);

  // AR(1) with phi = 0.9 has integrated autocorrelation time 19.
  Eigen::MatrixXd ar(20000, 1);
  double x = 0.0;
  for (Eigen::Index i = 0; i < ar.rows(); ++i) ar(i, 0) = x = 0.9 * x + z(rng);
  CHECK(effective_sample_size(ar) == doctest::Approx(20000.0 / 19.0).epsilon(0.25));
}
