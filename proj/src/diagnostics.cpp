#include <algorithm>
#include <cmath>
#include <limits>

#include "asched/inference.hpp"

namespace asched {

Eigen::VectorXd flatten(const Theta& theta) {
  std::vector<double> v(theta.beta.data(), theta.beta.data() + theta.beta.size());
  v.insert(v.end(), theta.gamma.data(), theta.gamma.data() + theta.gamma.size());
  v.insert(v.end(), theta.alpha.data(), theta.alpha.data() + theta.alpha.size());
  v.push_back(theta.sigma2);
  for (Eigen::Index i = 0; i < theta.D.rows(); ++i)
    for (Eigen::Index j = i; j < theta.D.cols(); ++j) v.push_back(theta.D(i, j));
  if (const auto* w = std::get_if<WeibullBaseline>(&theta.baseline)) {
    v.push_back(w->shape);
    v.push_back(w->scale);
  } else {
    const auto& p = std::get<PSplineBaseline>(theta.baseline);
    v.push_back(p.intercept);
    v.insert(v.end(), p.coefficients.data(), p.coefficients.data() + p.coefficients.size());
  }
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<std::string> parameter_names(const Theta& theta) {
  std::vector<std::string> out;
  const auto vec = [&](const char* name, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) out.push_back(std::string(name) + "[" + std::to_string(i) + "]");
  };
  vec("beta", theta.beta.size());
  vec("gamma", theta.gamma.size());
  vec("alpha", theta.alpha.size());
  out.emplace_back("sigma2");
  for (Eigen::Index i = 0; i < theta.D.rows(); ++i)
    for (Eigen::Index j = i; j < theta.D.cols(); ++j)
      out.push_back("D[" + std::to_string(i) + "," + std::to_string(j) + "]");
  if (std::holds_alternative<WeibullBaseline>(theta.baseline)) {
    out.emplace_back("weibull_shape");
    out.emplace_back("weibull_scale");
  } else {
    out.emplace_back("pspline_intercept");
    vec("pspline", std::get<PSplineBaseline>(theta.baseline).coefficients.size());
  }
  return out;
}

double rhat(const Eigen::MatrixXd& chains) {
  const Eigen::Index n = chains.rows(), m = chains.cols();
  if (m < 2) throw UsageError("R-hat needs at least two chains");
  if (n < 2) throw UsageError("R-hat needs at least two draws per chain");
  const Eigen::RowVectorXd means = chains.colwise().mean();
  const double grand = means.mean();
  const double b = static_cast<double>(n) / (m - 1) * (means.array() - grand).square().sum();
  double w = 0.0;
  for (Eigen::Index c = 0; c < m; ++c) w += (chains.col(c).array() - means[c]).square().sum() / (n - 1);
  w /= static_cast<double>(m);
  if (!(w > 0.0)) return b > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::max(1.0, std::sqrt(var_plus / w));
}

double effective_sample_size(const Eigen::MatrixXd& chains) {
  const Eigen::Index n = chains.rows(), m = chains.cols();
  const double total = static_cast<double>(n * m);
  if (n < 2) return std::max(1.0, total);
  double ess = 0.0;
  for (Eigen::Index c = 0; c < m; ++c) {
    const Eigen::ArrayXd x = chains.col(c).array() - chains.col(c).mean();
    const double c0 = x.square().sum() / n;
    if (!(c0 > 0.0)) {
      ess += 1.0;
      continue;
    }
    const auto rho = [&](Eigen::Index lag) { return (x.head(n - lag) * x.tail(n - lag)).sum() / n / c0; };
    // Geyer initial positive sequence over pairs of autocorrelations.
    double sum = 0.0;
    for (Eigen::Index k = 0; 2 * k + 1 < n; ++k) {
      const double pair = (k == 0 ? 1.0 : rho(2 * k)) + rho(2 * k + 1);
      if (pair <= 0.0) break;
      sum += pair;
    }
    const double tau = std::max(2.0 * sum - 1.0, 1.0 / static_cast<double>(n));
    ess += static_cast<double>(n) / tau;
  }
  return std::clamp(ess, std::numeric_limits<double>::min(), total);
}

Diagnostics diagnostics(const PosteriorSamples& samples) {
  Diagnostics out;
  if (samples.draws.empty()) return out;
  out.names = parameter_names(samples.draws.front().theta);
  const Eigen::Index k = static_cast<Eigen::Index>(out.names.size());
  const Eigen::Index m = samples.chains;
  const Eigen::Index n = static_cast<Eigen::Index>(samples.draws_per_chain());
  std::vector<Eigen::MatrixXd> per_param(k, Eigen::MatrixXd(n, m));
  for (Eigen::Index c = 0; c < m; ++c)
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::VectorXd v = flatten(samples.draws[static_cast<std::size_t>(c * n + i)].theta);
      for (Eigen::Index j = 0; j < k; ++j) per_param[j](i, c) = v[j];
    }
  out.ess.resize(k);
  if (m >= 2 && n >= 2) out.rhat.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    out.ess[j] = effective_sample_size(per_param[j]);
    if (out.rhat.size()) out.rhat[j] = rhat(per_param[j]);
  }
  return out;
}

Eigen::VectorXd posterior_mean(const PosteriorSamples& samples) {
  if (samples.draws.empty()) throw DomainError("posterior has no draws");
  Eigen::VectorXd sum = flatten(samples.draws.front().theta);
  for (std::size_t i = 1; i < samples.draws.size(); ++i) sum += flatten(samples.draws[i].theta);
  return sum / static_cast<double>(samples.draws.size());
}

}  // namespace asched
