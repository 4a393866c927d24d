#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "asched/inference.hpp"
#include "asched/quadrature.hpp"
#include "asched/random.hpp"

namespace asched {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// Panel width of the fixed survival quadrature used inside the sampler.
constexpr double kPanelWidth = 1.0;

enum class SurvKind { Right, Interval, Exact };

// Everything about one patient that does not depend on the parameters, plus
// the parameter-dependent pieces of the current state.
struct PatientCache {
  double age = 0.0;
  Eigen::VectorXd w;
  Eigen::MatrixXd X, Z;
  Eigen::VectorXd y;
  Eigen::MatrixXd XtZ, ZtZ;
  Eigen::VectorXd Zty;

  // Quadrature nodes: m0 on [0, l], then m1 on [l, r]; an exact event adds
  // its time as the last node.
  SurvKind kind = SurvKind::Right;
  Eigen::Index m0 = 0, m1 = 0;
  Eigen::MatrixXd Xn, dXn, Zn, dZn, Bn;
  Eigen::VectorXd weights, log_t;

  Eigen::VectorXd b;
  Eigen::VectorXd fm, fs;  // Xn beta, dXn beta
  Eigen::VectorXd rm, rs;  // Zn b, dZn b
  Eigen::VectorXd logh0;
  double surv = 0.0;
};

PatientCache make_cache(const PatientRecord& rec, const ModelSpec& spec, const std::vector<double>& cuts,
                        const SplineBasis* pspline) {
  PatientCache c;
  const auto& h = rec.history;
  c.age = h.age_at_entry;
  c.w = baseline_covariates(c.age, spec);
  const Eigen::Index n = static_cast<Eigen::Index>(h.psa.size());
  c.X.resize(n, spec.fixed_dim());
  c.Z.resize(n, spec.random_dim());
  c.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const DesignPoint d = design_at(h.psa[i].time, c.age, spec);
    c.X.row(i) = d.x.transpose();
    c.Z.row(i) = d.z.transpose();
    c.y[i] = h.psa[i].log2_psa();
  }
  c.XtZ = c.X.transpose() * c.Z;
  c.ZtZ = c.Z.transpose() * c.Z;
  c.Zty = c.Z.transpose() * c.y;

  const auto& iv = rec.interval;
  std::vector<double> nodes, weights;
  const auto append = [&](const QuadratureMesh& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      nodes.push_back(m.nodes[i]);
      weights.push_back(m.weights[i]);
    }
  };
  const QuadratureMesh lower = QuadratureMesh::build(0.0, iv.l, cuts, kPanelWidth);
  append(lower);
  c.m0 = lower.size();
  if (iv.right_censored()) {
    c.kind = SurvKind::Right;
  } else if (iv.exact()) {
    c.kind = SurvKind::Exact;
    nodes.push_back(iv.l);
    weights.push_back(0.0);
  } else {
    c.kind = SurvKind::Interval;
    const QuadratureMesh upper = QuadratureMesh::build(iv.l, iv.r, cuts, kPanelWidth);
    append(upper);
    c.m1 = upper.size();
  }
  const Eigen::Index m = static_cast<Eigen::Index>(nodes.size());
  c.Xn.resize(m, spec.fixed_dim());
  c.dXn.resize(m, spec.fixed_dim());
  c.Zn.resize(m, spec.random_dim());
  c.dZn.resize(m, spec.random_dim());
  c.weights = Eigen::Map<const Eigen::VectorXd>(weights.data(), m);
  c.log_t.resize(m);
  if (pspline) c.Bn.resize(m, pspline->dimension());
  for (Eigen::Index i = 0; i < m; ++i) {
    const DesignPoint d = design_at(nodes[i], c.age, spec);
    c.Xn.row(i) = d.x.transpose();
    c.dXn.row(i) = d.dx.transpose();
    c.Zn.row(i) = d.z.transpose();
    c.dZn.row(i) = d.dz.transpose();
    c.log_t[i] = std::log(nodes[i]);
    if (pspline)
      c.Bn.row(i) = bspline_basis(std::clamp(nodes[i], pspline->low, pspline->high), *pspline).transpose();
  }
  return c;
}

// Random-walk proposal whose covariance follows the empirical covariance of
// the chain and whose scale is tuned toward a target acceptance rate, both
// only while adapting.
class AdaptiveProposal {
 public:
  AdaptiveProposal() = default;
  AdaptiveProposal(const Eigen::MatrixXd& cov, double target)
      : d_(cov.rows()),
        target_(target),
        log_scale_(std::log(2.38 / std::sqrt(static_cast<double>(cov.rows())))),
        mean_(Eigen::VectorXd::Zero(cov.rows())),
        m2_(Eigen::MatrixXd::Zero(cov.rows(), cov.rows())) {
    set_covariance(cov);
  }

  Eigen::VectorXd propose(Rng& rng, const Eigen::VectorXd& x) const {
    return x + std::exp(log_scale_) * (chol_ * rng.standard_normal(d_));
  }

  void record(bool accepted) {
    ++tried_;
    if (accepted) ++accepted_;
  }

  void adapt(const Eigen::VectorXd& x, bool accepted, bool covariance) {
    ++steps_;
    log_scale_ += ((accepted ? 1.0 : 0.0) - target_) / std::pow(steps_ + 1.0, 0.6);
    log_scale_ = std::clamp(log_scale_, -15.0, 5.0);
    if (!covariance) return;
    ++n_;
    const Eigen::VectorXd delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_).transpose();
    if (n_ >= 2 * d_ + 20 && n_ % 50 == 0) {
      const Eigen::MatrixXd cov = m2_ / static_cast<double>(n_ - 1);
      const double floor = 1e-10 * std::max(1.0, cov.diagonal().maxCoeff());
      set_covariance(cov + floor * Eigen::MatrixXd::Identity(d_, d_));
    }
  }

  double acceptance() const { return tried_ > 0 ? static_cast<double>(accepted_) / tried_ : 0.0; }

 private:
  void set_covariance(const Eigen::MatrixXd& cov) {
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() == Eigen::Success) chol_ = llt.matrixL();
    else if (chol_.size() == 0) chol_ = (0.1 * Eigen::MatrixXd::Identity(d_, d_)).eval();
  }

  Eigen::Index d_ = 0;
  double target_ = 0.234;
  double log_scale_ = 0.0;
  Eigen::MatrixXd chol_;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd m2_;
  long n_ = 0;
  long steps_ = 0;
  long tried_ = 0, accepted_ = 0;
};

// Scalar step size tuned by Robbins-Monro toward a target acceptance rate.
struct ScaleAdapter {
  double log_scale = 0.0;
  double target = 0.3;
  long steps = 0;
  long tried = 0, accepted = 0;

  double scale() const { return std::exp(log_scale); }
  void record(bool acc, bool adapt) {
    ++tried;
    if (acc) ++accepted;
    if (!adapt) return;
    ++steps;
    log_scale += ((acc ? 1.0 : 0.0) - target) / std::pow(steps + 1.0, 0.6);
    log_scale = std::clamp(log_scale, -10.0, 3.0);
  }
  double acceptance() const { return tried > 0 ? static_cast<double>(accepted) / tried : 0.0; }
};

// Negative inverse of a finite-difference Hessian of f at x; a diagonal
// fallback when that is not positive definite.
Eigen::MatrixXd laplace_covariance(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                   double h) {
  const Eigen::Index d = x.size();
  const double f0 = f(x);
  Eigen::MatrixXd neg_h(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    neg_h(i, i) = -(f(xp) - 2.0 * f0 + f(xm)) / (h * h);
    for (Eigen::Index j = 0; j < i; ++j) {
      Eigen::VectorXd pp = x, pm = x, mp = x, mm = x;
      pp[i] += h, pp[j] += h;
      pm[i] += h, pm[j] -= h;
      mp[i] -= h, mp[j] += h;
      mm[i] -= h, mm[j] -= h;
      neg_h(i, j) = neg_h(j, i) = -(f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * h * h);
    }
  }
  if (neg_h.allFinite()) {
    Eigen::LLT<Eigen::MatrixXd> llt(neg_h);
    if (llt.info() == Eigen::Success) return llt.solve(Eigen::MatrixXd::Identity(d, d));
  }
  Eigen::MatrixXd diag = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    diag(i, i) = std::isfinite(neg_h(i, i)) && neg_h(i, i) > 1.0 ? 1.0 / neg_h(i, i) : 0.01;
  return diag;
}

class ChainSampler {
 public:
  ChainSampler(const Dataset& data, const ModelSpec& spec, const PriorConfig& priors, const McmcConfig& config,
               std::uint64_t seed)
      : spec_(spec), priors_(priors), config_(config), rng_(seed) {
    slope_ = spec.functional_form == FunctionalForm::ValueAndSlope;
    initialize(data);
  }

  void run(std::vector<Draw>& out) {
    for (int it = 0; it < config_.iterations; ++it) {
      const bool adapt = it < config_.burn_in;
      const bool adapt_cov = adapt && it >= config_.adapt_start;
      update_beta(adapt);
      update_random_effects(adapt);
      update_sigma2();
      update_d();
      if (config_.survival) {
        update_association(adapt, adapt_cov);
        update_baseline(adapt, adapt_cov);
      }
      update_hyper();
      if (it >= config_.burn_in && (it - config_.burn_in + 1) % config_.thin == 0) {
        Draw d;
        d.theta = theta_;
        if (config_.store_random_effects) {
          d.b.reserve(cache_.size());
          for (const auto& c : cache_) d.b.push_back(c.b);
        }
        out.push_back(std::move(d));
      }
    }
  }

  std::vector<std::pair<std::string, double>> acceptance() const {
    std::vector<std::pair<std::string, double>> out{{"beta_independence", beta_imh_.acceptance()},
                                                    {"beta_walk", beta_rw_.acceptance()},
                                                    {"b_independence", b_imh_.acceptance()},
                                                    {"b_walk", b_rw_.acceptance()}};
    if (config_.survival) {
      out.emplace_back("association", assoc_.acceptance());
      out.emplace_back("baseline", baseline_.acceptance());
    }
    return out;
  }

 private:
  // ---- survival likelihood on the cached nodes -------------------------
  double surv_ll(const PatientCache& c, const Eigen::VectorXd& logh0, const Eigen::VectorXd& gamma,
                 const Eigen::VectorXd& alpha, const Eigen::VectorXd& fm, const Eigen::VectorXd& fs,
                 const Eigen::VectorXd& rm, const Eigen::VectorXd& rs) const {
    if (!config_.survival) return 0.0;
    const Eigen::Index n = c.weights.size();
    if (n == 0) return 0.0;
    const double gw = c.w.size() > 0 ? c.w.dot(gamma) : 0.0;
    Eigen::ArrayXd eta = logh0.array() + gw + alpha[0] * (fm + rm).array();
    if (slope_) eta += alpha[1] * (fs + rs).array();
    const double h0 = (c.weights.head(c.m0).array() * eta.head(c.m0).exp()).sum();
    double out = -h0;
    switch (c.kind) {
      case SurvKind::Right:
        break;
      case SurvKind::Exact:
        out += eta[n - 1];
        break;
      case SurvKind::Interval: {
        const double h1 = (c.weights.segment(c.m0, c.m1).array() * eta.segment(c.m0, c.m1).exp()).sum();
        if (!(h1 > 0.0)) return kNegInf;
        out += std::log(-std::expm1(-h1));
        break;
      }
    }
    return std::isfinite(out) ? out : kNegInf;
  }

  double surv_current(const PatientCache& c) const {
    return surv_ll(c, c.logh0, theta_.gamma, theta_.alpha, c.fm, c.fs, c.rm, c.rs);
  }

  Eigen::VectorXd log_baseline_at_nodes(const PatientCache& c, const BaselineHazard& baseline) const {
    if (const auto* w = std::get_if<WeibullBaseline>(&baseline)) {
      const double lk = std::log(w->shape), ll = std::log(w->scale);
      return ((lk - ll) + (w->shape - 1.0) * (c.log_t.array() - ll)).matrix();
    }
    const auto& p = std::get<PSplineBaseline>(baseline);
    return (p.intercept + (c.Bn * p.coefficients).array()).matrix();
  }

  // ---- initialization ---------------------------------------------------
  void initialize(const Dataset& data) {
    const Eigen::Index p = spec_.fixed_dim(), q = spec_.random_dim();
    theta_.beta = Eigen::VectorXd::Zero(p);
    theta_.gamma = Eigen::VectorXd::Zero(spec_.gamma_dim());
    theta_.alpha = Eigen::VectorXd::Zero(spec_.alpha_dim());
    theta_.D = config_.fixed_D ? *config_.fixed_D : Eigen::MatrixXd::Identity(q, q);
    theta_.hyper.psi_gamma = Eigen::VectorXd::Ones(spec_.gamma_dim());
    theta_.hyper.psi_alpha = Eigen::VectorXd::Ones(spec_.alpha_dim());

    // Crude constant event rate for the baseline starting point.
    double events = 0.0, exposure = 0.0, horizon = 0.0;
    for (const auto& rec : data.patients) {
      const auto& iv = rec.interval;
      if (iv.right_censored()) {
        exposure += iv.l;
        horizon = std::max(horizon, iv.l);
      } else {
        events += 1.0;
        exposure += 0.5 * (iv.l + iv.r);
        horizon = std::max(horizon, iv.r);
      }
    }
    const double rate = std::max(events, 1.0) / std::max(exposure, 1e-3);

    std::vector<double> cuts = spec_.breakpoints();
    if (config_.baseline == BaselineKind::Weibull) {
      theta_.baseline = WeibullBaseline{1.0, 1.0 / rate};
    } else {
      if (config_.pspline_horizon > 0.0) horizon = config_.pspline_horizon;
      if (!(horizon > 0.0)) horizon = 1.0;
      PSplineBaseline ps;
      ps.basis.degree = 3;
      ps.basis.low = 0.0;
      ps.basis.high = horizon;
      for (int k = 1; k <= config_.pspline_knots; ++k)
        ps.basis.internal_knots.push_back(horizon * k / (config_.pspline_knots + 1.0));
      ps.intercept = std::log(rate);
      ps.coefficients = Eigen::VectorXd::Zero(ps.basis.dimension());
      ps.penalty_order = 2;
      penalty_ = PenaltyMatrix::build(ps.basis.dimension(), ps.penalty_order, priors_.pspline_ridge_eps);
      cuts.insert(cuts.end(), ps.basis.internal_knots.begin(), ps.basis.internal_knots.end());
      cuts.push_back(horizon);
      theta_.baseline = ps;
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    const SplineBasis* pspline = nullptr;
    if (const auto* ps = std::get_if<PSplineBaseline>(&theta_.baseline)) pspline = &ps->basis;

    cache_.reserve(data.size());
    Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd xty = Eigen::VectorXd::Zero(p);
    long n_obs = 0;
    for (const auto& rec : data.patients) {
      cache_.push_back(make_cache(rec, spec_, cuts, pspline));
      const auto& c = cache_.back();
      xtx += c.X.transpose() * c.X;
      xty += c.X.transpose() * c.y;
      n_obs += c.y.size();
    }
    xtx_ = xtx;
    xty_ = xty;
    n_obs_ = n_obs;

    // Pooled least squares for beta, then per-patient ridge fits for b.
    theta_.beta = (xtx + 1e-8 * Eigen::MatrixXd::Identity(p, p)).ldlt().solve(xty);
    double ssr = 0.0;
    for (auto& c : cache_) {
      const Eigen::VectorXd r = c.y - c.X * theta_.beta;
      c.b = (c.ZtZ + 1e-2 * Eigen::MatrixXd::Identity(q, q)).ldlt().solve(c.Z.transpose() * r);
      ssr += (r - c.Z * c.b).squaredNorm();
    }
    const double dof = std::max(1.0, static_cast<double>(n_obs) - static_cast<double>(q * cache_.size()));
    theta_.sigma2 = config_.fixed_sigma2 ? *config_.fixed_sigma2 : std::max(ssr / dof, 1e-3);

    for (auto& c : cache_) {
      c.fm = c.Xn * theta_.beta;
      c.fs = c.dXn * theta_.beta;
      c.rm = c.Zn * c.b;
      c.rs = c.dZn * c.b;
      c.logh0 = log_baseline_at_nodes(c, theta_.baseline);
      c.surv = surv_current(c);
    }
    check_finite_start();

    beta_rw_.log_scale = std::log(0.5);
    b_rw_.log_scale = std::log(0.5);
    if (config_.survival) {
      const Eigen::VectorXd x0 = assoc_vector(theta_.gamma, theta_.alpha);
      assoc_ = AdaptiveProposal(laplace_covariance([&](const Eigen::VectorXd& x) { return assoc_target(x); }, x0, 1e-4),
                                x0.size() == 1 ? 0.44 : 0.234);
      const Eigen::VectorXd y0 = baseline_vector(theta_.baseline);
      baseline_ = AdaptiveProposal(
          laplace_covariance([&](const Eigen::VectorXd& y) { return baseline_target(y, nullptr); }, y0, 1e-4),
          y0.size() == 1 ? 0.44 : 0.234);
    }
  }

  void check_finite_start() const {
    double lon = 0.0, sur = 0.0, ran = 0.0;
    for (const auto& c : cache_) {
      lon += -0.5 * (c.y - c.X * theta_.beta - c.Z * c.b).squaredNorm() / theta_.sigma2;
      sur += c.surv;
      ran += ranef_logprior(c.b, theta_.D);
    }
    if (!std::isfinite(lon)) throw NumericError("non-finite log-posterior at initialization: longitudinal", "init");
    if (!std::isfinite(sur)) throw NumericError("non-finite log-posterior at initialization: survival", "init");
    if (!std::isfinite(ran)) throw NumericError("non-finite log-posterior at initialization: random effects", "init");
    const double prior = theta_logprior(theta_, priors_, penalty_.K.size() ? &penalty_ : nullptr);
    if (!std::isfinite(prior)) throw NumericError("non-finite log-posterior at initialization: prior", "init");
  }

  // ---- fixed effects ------------------------------------------------------
  double surv_total() const {
    double s = 0.0;
    for (const auto& c : cache_) s += c.surv;
    return s;
  }

  // Survival log-likelihood at a candidate beta; fills per-patient pieces.
  double beta_candidate(const Eigen::VectorXd& beta, std::vector<Eigen::VectorXd>& fm, std::vector<Eigen::VectorXd>& fs,
                        std::vector<double>& surv) const {
    double total = 0.0;
    for (std::size_t i = 0; i < cache_.size(); ++i) {
      const auto& c = cache_[i];
      fm[i] = c.Xn * beta;
      fs[i] = c.dXn * beta;
      surv[i] = surv_ll(c, c.logh0, theta_.gamma, theta_.alpha, fm[i], fs[i], c.rm, c.rs);
      total += surv[i];
      if (!std::isfinite(total)) return kNegInf;
    }
    return total;
  }

  void accept_beta(const Eigen::VectorXd& beta, std::vector<Eigen::VectorXd>& fm, std::vector<Eigen::VectorXd>& fs,
                   const std::vector<double>& surv) {
    theta_.beta = beta;
    for (std::size_t i = 0; i < cache_.size(); ++i) {
      cache_[i].fm.swap(fm[i]);
      cache_[i].fs.swap(fs[i]);
      cache_[i].surv = surv[i];
    }
  }

  void update_beta(bool adapt) {
    const Eigen::Index p = theta_.beta.size();
    const double s2 = theta_.sigma2;
    const Eigen::MatrixXd prec = xtx_ / s2 + Eigen::MatrixXd::Identity(p, p) / priors_.beta_var;
    Eigen::VectorXd rhs = xty_;
    for (const auto& c : cache_) rhs -= c.XtZ * c.b;
    rhs /= s2;
    const Eigen::LLT<Eigen::MatrixXd> llt(prec);
    const Eigen::VectorXd mu = llt.solve(rhs);
    const auto quad = [&](const Eigen::VectorXd& x) { return (x - mu).dot(prec * (x - mu)); };

    std::vector<Eigen::VectorXd> fm(cache_.size()), fs(cache_.size());
    std::vector<double> surv(cache_.size());
    if (!config_.survival) {
      const Eigen::VectorXd prop = mu + llt.matrixU().solve(rng_.standard_normal(p));
      beta_candidate(prop, fm, fs, surv);
      accept_beta(prop, fm, fs, surv);
      beta_imh_.record(true, false);
      return;
    }
    // Independence proposal from the Gaussian full conditional of the
    // longitudinal part; accepted on the survival likelihood ratio.
    {
      const Eigen::VectorXd prop = mu + llt.matrixU().solve(rng_.standard_normal(p));
      const double cand = beta_candidate(prop, fm, fs, surv);
      const bool acc = std::log(rng_.uniform_open()) < cand - surv_total();
      if (acc) accept_beta(prop, fm, fs, surv);
      beta_imh_.record(acc, false);
    }
    {
      const Eigen::VectorXd prop =
          theta_.beta + beta_rw_.scale() * llt.matrixU().solve(rng_.standard_normal(p)).eval();
      const double cand = beta_candidate(prop, fm, fs, surv);
      const double log_ratio = -0.5 * quad(prop) + 0.5 * quad(theta_.beta) + cand - surv_total();
      const bool acc = std::log(rng_.uniform_open()) < log_ratio;
      if (acc) accept_beta(prop, fm, fs, surv);
      beta_rw_.record(acc, adapt);
    }
  }

  // ---- random effects ------------------------------------------------------
  void update_random_effects(bool adapt) {
    const Eigen::Index q = theta_.D.rows();
    const double s2 = theta_.sigma2;
    const Eigen::MatrixXd d_inv = theta_.D.llt().solve(Eigen::MatrixXd::Identity(q, q));
    for (auto& c : cache_) {
      const Eigen::MatrixXd prec = c.ZtZ / s2 + d_inv;
      const Eigen::VectorXd rhs = (c.Zty - c.XtZ.transpose() * theta_.beta) / s2;
      const Eigen::LLT<Eigen::MatrixXd> llt(prec);
      const Eigen::VectorXd mu = llt.solve(rhs);

      const auto try_b = [&](const Eigen::VectorXd& prop, double extra) {
        Eigen::VectorXd rm = c.Zn * prop, rs = c.dZn * prop;
        const double cand = surv_ll(c, c.logh0, theta_.gamma, theta_.alpha, c.fm, c.fs, rm, rs);
        const bool acc = std::log(rng_.uniform_open()) < extra + cand - c.surv;
        if (acc) {
          c.b = prop;
          c.rm.swap(rm);
          c.rs.swap(rs);
          c.surv = cand;
        }
        return acc;
      };

      const Eigen::VectorXd z = rng_.standard_normal(q);
      b_imh_.record(try_b(mu + llt.matrixU().solve(z), 0.0), false);
      if (!config_.survival) continue;
      const Eigen::VectorXd prop = c.b + b_rw_.scale() * llt.matrixU().solve(rng_.standard_normal(q)).eval();
      const auto quad = [&](const Eigen::VectorXd& x) { return (x - mu).dot(prec * (x - mu)); };
      b_rw_.record(try_b(prop, -0.5 * quad(prop) + 0.5 * quad(c.b)), adapt);
    }
  }

  // ---- variance components ----------------------------------------------------
  void update_sigma2() {
    if (config_.fixed_sigma2) {
      theta_.sigma2 = *config_.fixed_sigma2;
      return;
    }
    double ssr = 0.0;
    for (const auto& c : cache_) ssr += (c.y - c.X * theta_.beta - c.Z * c.b).squaredNorm();
    const double shape = priors_.sigma2_shape + 0.5 * static_cast<double>(n_obs_);
    const double rate = priors_.sigma2_rate + 0.5 * ssr;
    theta_.sigma2 = 1.0 / rng_.gamma(shape, rate);
  }

  void update_d() {
    if (config_.fixed_D) return;
    const Eigen::Index q = theta_.D.rows();
    Eigen::MatrixXd scale = Eigen::MatrixXd::Identity(q, q);
    for (const auto& c : cache_) scale += c.b * c.b.transpose();
    theta_.D = inverse_wishart(rng_, priors_.wishart_dof(q) + static_cast<double>(cache_.size()), scale);
  }

  // ---- association and baseline covariate coefficients --------------------------
  static double ridge_normal(const Eigen::VectorXd& x, double tau, const Eigen::VectorXd& psi) {
    double out = 0.0;
    for (Eigen::Index s = 0; s < x.size(); ++s) out -= 0.5 * x[s] * x[s] / (tau * psi[s]);
    return out;
  }

  Eigen::VectorXd assoc_vector(const Eigen::VectorXd& gamma, const Eigen::VectorXd& alpha) const {
    Eigen::VectorXd x(gamma.size() + alpha.size());
    x << gamma, alpha;
    return x;
  }

  double assoc_target(const Eigen::VectorXd& x, std::vector<double>* surv = nullptr) const {
    const Eigen::Index g = theta_.gamma.size();
    const Eigen::VectorXd gamma = x.head(g), alpha = x.tail(x.size() - g);
    double total = ridge_normal(gamma, theta_.hyper.tau_gamma, theta_.hyper.psi_gamma) +
                   ridge_normal(alpha, theta_.hyper.tau_alpha, theta_.hyper.psi_alpha);
    for (std::size_t i = 0; i < cache_.size(); ++i) {
      const auto& c = cache_[i];
      const double s = surv_ll(c, c.logh0, gamma, alpha, c.fm, c.fs, c.rm, c.rs);
      if (surv) (*surv)[i] = s;
      total += s;
      if (!std::isfinite(total)) return kNegInf;
    }
    return total;
  }

  void update_association(bool adapt, bool adapt_cov) {
    const Eigen::VectorXd x = assoc_vector(theta_.gamma, theta_.alpha);
    const Eigen::VectorXd prop = assoc_.propose(rng_, x);
    std::vector<double> surv(cache_.size());
    const double cand = assoc_target(prop, &surv);
    const double cur = surv_total() + ridge_normal(theta_.gamma, theta_.hyper.tau_gamma, theta_.hyper.psi_gamma) +
                       ridge_normal(theta_.alpha, theta_.hyper.tau_alpha, theta_.hyper.psi_alpha);
    const bool acc = std::log(rng_.uniform_open()) < cand - cur;
    if (acc) {
      const Eigen::Index g = theta_.gamma.size();
      theta_.gamma = prop.head(g);
      theta_.alpha = prop.tail(prop.size() - g);
      for (std::size_t i = 0; i < cache_.size(); ++i) cache_[i].surv = surv[i];
    }
    assoc_.record(acc);
    if (adapt) assoc_.adapt(acc ? prop : x, acc, adapt_cov);
  }

  // ---- baseline hazard ------------------------------------------------------------
  static Eigen::VectorXd baseline_vector(const BaselineHazard& baseline) {
    if (const auto* w = std::get_if<WeibullBaseline>(&baseline))
      return Eigen::Vector2d(std::log(w->shape), std::log(w->scale));
    return std::get<PSplineBaseline>(baseline).coefficients;
  }

  BaselineHazard baseline_from(const Eigen::VectorXd& y) const {
    if (std::holds_alternative<WeibullBaseline>(theta_.baseline)) return WeibullBaseline{std::exp(y[0]), std::exp(y[1])};
    PSplineBaseline ps = std::get<PSplineBaseline>(theta_.baseline);
    ps.coefficients = y;
    return ps;
  }

  double baseline_prior(const Eigen::VectorXd& y) const {
    if (std::holds_alternative<WeibullBaseline>(theta_.baseline))
      return -0.5 * y.squaredNorm() / priors_.weibull_log_var;
    return -0.5 * theta_.hyper.tau_h * y.dot(penalty_.K * y);
  }

  double baseline_target(const Eigen::VectorXd& y, std::vector<std::pair<Eigen::VectorXd, double>>* out) const {
    const BaselineHazard candidate = baseline_from(y);
    double total = baseline_prior(y);
    for (std::size_t i = 0; i < cache_.size(); ++i) {
      const auto& c = cache_[i];
      Eigen::VectorXd logh0 = log_baseline_at_nodes(c, candidate);
      const double s = surv_ll(c, logh0, theta_.gamma, theta_.alpha, c.fm, c.fs, c.rm, c.rs);
      total += s;
      if (out) (*out)[i] = {std::move(logh0), s};
      if (!std::isfinite(total)) return kNegInf;
    }
    return total;
  }

  void update_baseline(bool adapt, bool adapt_cov) {
    const Eigen::VectorXd y = baseline_vector(theta_.baseline);
    const Eigen::VectorXd prop = baseline_.propose(rng_, y);
    std::vector<std::pair<Eigen::VectorXd, double>> pieces(cache_.size());
    const double cand = baseline_target(prop, &pieces);
    const double cur = surv_total() + baseline_prior(y);
    const bool acc = std::log(rng_.uniform_open()) < cand - cur;
    if (acc) {
      theta_.baseline = baseline_from(prop);
      for (std::size_t i = 0; i < cache_.size(); ++i) {
        cache_[i].logh0.swap(pieces[i].first);
        cache_[i].surv = pieces[i].second;
      }
    }
    baseline_.record(acc);
    if (adapt) baseline_.adapt(acc ? prop : y, acc, adapt_cov);
  }

  // ---- hyperparameters -----------------------------------------------------------
  void update_ridge(const Eigen::VectorXd& x, double& tau, Eigen::VectorXd& psi) {
    if (x.size() == 0) return;
    double quad = 0.0;
    for (Eigen::Index s = 0; s < x.size(); ++s) quad += x[s] * x[s] / psi[s];
    tau = 1.0 / rng_.gamma(priors_.ridge_tau_shape + 0.5 * static_cast<double>(x.size()),
                           priors_.ridge_tau_rate + 0.5 * quad);
    for (Eigen::Index s = 0; s < x.size(); ++s)
      psi[s] = 1.0 / rng_.gamma(priors_.ridge_psi_shape + 0.5, priors_.ridge_psi_rate + 0.5 * x[s] * x[s] / tau);
  }

  void update_hyper() {
    auto& h = theta_.hyper;
    update_ridge(theta_.gamma, h.tau_gamma, h.psi_gamma);
    update_ridge(theta_.alpha, h.tau_alpha, h.psi_alpha);
    if (const auto* ps = std::get_if<PSplineBaseline>(&theta_.baseline)) {
      const double quad = ps->coefficients.dot(penalty_.K * ps->coefficients);
      h.tau_h = rng_.gamma(priors_.pspline_tau_shape + 0.5 * penalty_.rank, priors_.pspline_tau_rate + 0.5 * quad);
    }
  }

  ModelSpec spec_;
  PriorConfig priors_;
  McmcConfig config_;
  Rng rng_;
  bool slope_ = true;

  Theta theta_;
  std::vector<PatientCache> cache_;
  Eigen::MatrixXd xtx_;
  Eigen::VectorXd xty_;
  long n_obs_ = 0;
  PenaltyMatrix penalty_;

  ScaleAdapter beta_imh_, beta_rw_, b_imh_, b_rw_;
  AdaptiveProposal assoc_, baseline_;
};

}  // namespace

PosteriorSamples run_mcmc(const Dataset& data, const ModelSpec& spec, const PriorConfig& priors,
                          const McmcConfig& config) {
  config.validate();
  priors.validate();
  spec.validate();
  if (data.size() == 0) throw DataError("cannot fit an empty dataset");
  data.validate();

  PosteriorSamples out;
  out.chains = config.chains;
  out.spec = spec;
  out.priors = priors;
  out.seed = config.seed;
  out.draws.reserve(static_cast<std::size_t>(config.chains) * config.draws_per_chain());
  std::vector<std::pair<std::string, double>> acceptance;
  for (int chain = 0; chain < config.chains; ++chain) {
    ChainSampler sampler(data, spec, priors, config, derive_seed(config.seed, {static_cast<std::uint64_t>(chain)}));
    sampler.run(out.draws);
    const auto acc = sampler.acceptance();
    if (acceptance.empty()) acceptance.assign(acc.size(), {"", 0.0});
    for (std::size_t k = 0; k < acc.size(); ++k) {
      acceptance[k].first = acc[k].first;
      acceptance[k].second += acc[k].second / config.chains;
    }
  }
  out.diagnostics = diagnostics(out);
  out.diagnostics.acceptance = acceptance;
  return out;
}

}  // namespace asched
