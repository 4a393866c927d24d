#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <random>

namespace asched {

// One step of the splitmix64 generator.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Seed of the substream addressed by path, e.g. {dataset, patient, stream}.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::uint64_t state = master;
  std::uint64_t out = splitmix64(state);
  for (std::uint64_t p : path) {
    state = out ^ (p * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL);
    out = splitmix64(state);
  }
  return out;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  // Uniform on (0, 1), never returning 0.
  double uniform_open() {
    double u;
    do u = uniform();
    while (u <= 0.0);
    return u;
  }
  double normal() { return normal_(engine_); }
  double normal(double mean, double sd) { return mean + sd * normal(); }
  // Gamma with shape a and rate b.
  double gamma(double shape, double rate) { return std::gamma_distribution<double>(shape, 1.0 / rate)(engine_); }
  double chi_squared(double df) { return gamma(0.5 * df, 0.5); }

  Eigen::VectorXd standard_normal(Eigen::Index n) {
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = normal();
    return z;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

// mean + L z with L a lower Cholesky factor of the covariance.
inline Eigen::VectorXd mvn_from_cholesky(Rng& rng, const Eigen::VectorXd& mean, const Eigen::MatrixXd& lower) {
  return mean + lower * rng.standard_normal(mean.size());
}

// Draw from N(mean, precision^{-1}) given the precision matrix.
inline Eigen::VectorXd mvn_from_precision(Rng& rng, const Eigen::VectorXd& mean, const Eigen::MatrixXd& precision) {
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  // precision = U'U, x = mean + U^{-1} z has covariance (U'U)^{-1}.
  const Eigen::VectorXd z = rng.standard_normal(mean.size());
  return mean + llt.matrixU().solve(z);
}

// Inverse-Wishart IW(df, scale) via the Bartlett decomposition of its inverse.
inline Eigen::MatrixXd inverse_wishart(Rng& rng, double df, const Eigen::MatrixXd& scale) {
  const Eigen::Index q = scale.rows();
  const Eigen::MatrixXd scale_inv = scale.llt().solve(Eigen::MatrixXd::Identity(q, q));
  const Eigen::MatrixXd l = scale_inv.llt().matrixL();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(q, q);
  for (Eigen::Index i = 0; i < q; ++i) {
    a(i, i) = std::sqrt(rng.chi_squared(df - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  const Eigen::MatrixXd la = l * a;
  const Eigen::MatrixXd wishart = la * la.transpose();
  Eigen::MatrixXd out = wishart.llt().solve(Eigen::MatrixXd::Identity(q, q));
  return 0.5 * (out + out.transpose());
}

}  // namespace asched
