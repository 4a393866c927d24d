#include "asched/prediction.hpp"

#include <algorithm>
#include <cmath>

#include "asched/random.hpp"
#include "node_design.hpp"

namespace asched {

NewPatientState NewPatientState::from_history(const PatientHistory& history) {
  NewPatientState s;
  s.history = history;
  for (const auto& b : history.biopsies)
    if (!b.upgraded) s.t = b.time;
  s.s = history.last_psa_time();
  return s;
}

void NewPatientState::validate() const {
  history.validate();
  if (history.upgraded()) throw DataError("patient has reclassified and left surveillance", -1, "upgraded");
  if (!(t >= 0.0) || !std::isfinite(t)) throw DomainError("last biopsy time must be a nonnegative number");
  if (!(s >= 0.0) || !std::isfinite(s)) throw DomainError("last PSA time must be a nonnegative number");
  if (t < history.last_biopsy_time()) throw DomainError("t precedes the last recorded biopsy");
}

void PredictionConfig::validate() const {
  if (theta_draws < 1 || b_per_theta < 1) throw UsageError("prediction needs at least one theta and one b draw");
  if (burn_in < 0 || thin < 1) throw UsageError("invalid b-sampler burn-in or thinning");
  if (!(horizon > 0.0) || !(tail_cap > 0.0 && tail_cap < 1.0) || !(root_tol > 0.0) || !(panel_width > 0.0))
    throw UsageError("invalid prediction horizon, tail cap, tolerance or panel width");
}

PredictivePosterior::PredictivePosterior(NewPatientState state, ModelSpec spec, std::vector<Theta> thetas,
                                         std::vector<PredictivePair> pairs, double horizon, double tail_cap,
                                         double root_tol, double panel_width)
    : state_(std::move(state)),
      spec_(std::move(spec)),
      thetas_(std::move(thetas)),
      pairs_(std::move(pairs)),
      horizon_(horizon),
      tail_cap_(tail_cap),
      root_tol_(root_tol) {
  state_.validate();
  if (pairs_.empty() || thetas_.empty()) throw DomainError("predictive posterior needs at least one pair");
  if (!(horizon_ > state_.t)) throw DomainError("prediction horizon must exceed the last biopsy time");
  for (const auto& p : pairs_)
    if (p.theta >= thetas_.size()) throw DomainError("pair refers to a missing theta draw");

  const std::vector<double> cuts = hazard_breakpoints(thetas_.front(), spec_);
  mesh_ = QuadratureMesh::build(state_.t, horizon_, cuts, panel_width);
  const detail::NodeDesign nodes(mesh_.nodes, state_.history.age_at_entry, spec_);

  const Eigen::Index m = mesh_.size();
  const Eigen::Index np = static_cast<Eigen::Index>(pairs_.size());
  node_hazard_.resize(m, np);
  std::vector<Eigen::VectorXd> fixed(thetas_.size());
  for (Eigen::Index j = 0; j < np; ++j) {
    const auto& pair = pairs_[static_cast<std::size_t>(j)];
    const Theta& theta = thetas_[pair.theta];
    if (fixed[pair.theta].size() == 0) fixed[pair.theta] = nodes.fixed_eta(theta, spec_);
    node_hazard_.col(j) = (fixed[pair.theta] + nodes.random_eta(theta, pair.b, spec_)).array().exp().matrix();
  }
  if (!node_hazard_.allFinite()) throw NumericError("hazard overflow in the predictive tables", "hazard");

  const Eigen::Index panels = mesh_.panels();
  edge_cumulative_.resize(panels + 1, np);
  edge_cumulative_.row(0).setZero();
  node_survival_.resize(m);
  const auto& a = GaussKronrod15::cumulative_matrix();
  for (Eigen::Index k = 0; k < panels; ++k) {
    const double half = 0.5 * (mesh_.edges[k + 1] - mesh_.edges[k]);
    const auto block = node_hazard_.middleRows(15 * k, 15);
    edge_cumulative_.row(k + 1) = edge_cumulative_.row(k) + mesh_.weights.segment(15 * k, 15).transpose() * block;
    const Eigen::MatrixXd inside = (half * (a * block)).rowwise() + edge_cumulative_.row(k);
    node_survival_.segment(15 * k, 15) = (-inside.array()).exp().rowwise().mean().matrix();
  }
}

Eigen::VectorXd PredictivePosterior::conditional_cumulative_hazard(double u) const {
  if (u < state_.t) throw DomainError("survival is conditional on no event before t");
  if (u > horizon_) throw DomainError("time beyond the prediction horizon");
  const auto& e = mesh_.edges;
  const auto it = std::upper_bound(e.begin(), e.end(), u);
  const Eigen::Index k = static_cast<Eigen::Index>(it - e.begin()) - 1;
  if (k >= mesh_.panels() || u == e[static_cast<std::size_t>(k)])
    return edge_cumulative_.row(std::min<Eigen::Index>(k, mesh_.panels())).transpose();
  const double half = 0.5 * (e[k + 1] - e[k]);
  const double mid = 0.5 * (e[k + 1] + e[k]);
  const Eigen::Matrix<double, 1, 15> r = GaussKronrod15::cumulative_row((u - mid) / half);
  return (edge_cumulative_.row(k) + half * (r * node_hazard_.middleRows(15 * k, 15))).transpose();
}

PredictivePosterior sample_subject_effects(const NewPatientState& state, const PosteriorSamples& posterior,
                                           const PredictionConfig& config) {
  state.validate();
  config.validate();
  if (posterior.draws.empty()) throw DomainError("posterior has no draws");
  const ModelSpec& spec = posterior.spec;
  const double age = state.history.age_at_entry;

  const std::size_t total = posterior.draws.size();
  const std::size_t n_theta = std::min<std::size_t>(static_cast<std::size_t>(config.theta_draws), total);
  std::vector<Theta> thetas;
  thetas.reserve(n_theta);
  for (std::size_t k = 0; k < n_theta; ++k) thetas.push_back(posterior.draws[k * total / n_theta].theta);

  std::vector<PsaMeasurement> obs;
  for (const auto& m : state.history.psa)
    if (m.time <= state.s) obs.push_back(m);
  const Eigen::Index n = static_cast<Eigen::Index>(obs.size());
  Eigen::MatrixXd x(n, spec.fixed_dim()), z(n, spec.random_dim());
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const DesignPoint d = design_at(obs[i].time, age, spec);
    x.row(i) = d.x.transpose();
    z.row(i) = d.z.transpose();
    y[i] = obs[i].log2_psa();
  }
  const Eigen::MatrixXd ztz = z.transpose() * z;

  // Cumulative hazard up to t on a fixed mesh.
  const QuadratureMesh mesh0 = QuadratureMesh::build(0.0, state.t, hazard_breakpoints(thetas.front(), spec), 1.0);
  const detail::NodeDesign nodes0(mesh0.nodes, age, spec);

  std::vector<PredictivePair> pairs;
  pairs.reserve(n_theta * static_cast<std::size_t>(config.b_per_theta));
  const Eigen::Index q = spec.random_dim();
  for (std::size_t k = 0; k < n_theta; ++k) {
    const Theta& theta = thetas[k];
    Rng rng(derive_seed(config.seed, {static_cast<std::uint64_t>(k)}));
    const Eigen::MatrixXd d_inv = theta.D.llt().solve(Eigen::MatrixXd::Identity(q, q));
    const Eigen::MatrixXd prec = ztz / theta.sigma2 + d_inv;
    const Eigen::LLT<Eigen::MatrixXd> llt(prec);
    if (llt.info() != Eigen::Success) throw NumericError("random-effects conditional is not positive definite", "b");
    const Eigen::VectorXd mu = n > 0 ? llt.solve(z.transpose() * (y - x * theta.beta) / theta.sigma2).eval()
                                     : Eigen::VectorXd::Zero(q).eval();
    const Eigen::VectorXd fe0 = mesh0.size() > 0 ? nodes0.fixed_eta(theta, spec) : Eigen::VectorXd();
    const auto cum = [&](const Eigen::VectorXd& b) {
      if (mesh0.size() == 0) return 0.0;
      return mesh0.weights.dot((fe0 + nodes0.random_eta(theta, b, spec)).array().exp().matrix());
    };

    // Independence Metropolis: Gaussian proposal from the PSA-only
    // conditional, accepted on the survival weight exp(-H(t | b)).
    Eigen::VectorXd b = mu;
    double hb = cum(b);
    const auto step = [&] {
      const Eigen::VectorXd prop = mu + llt.matrixU().solve(rng.standard_normal(q));
      const double hp = cum(prop);
      const double u = rng.uniform_open();
      if (std::isfinite(hp) && (!std::isfinite(hb) || std::log(u) < hb - hp)) {
        b = prop;
        hb = hp;
      }
    };
    for (int i = 0; i < config.burn_in; ++i) step();
    for (int j = 0; j < config.b_per_theta; ++j) {
      for (int i = 0; i < config.thin; ++i) step();
      if (!std::isfinite(hb)) throw NumericError("non-finite survival weight for every b-draw", "b");
      pairs.push_back({k, b});
    }
  }
  return PredictivePosterior(state, spec, std::move(thetas), std::move(pairs), config.horizon, config.tail_cap,
                             config.root_tol, config.panel_width);
}

double dynamic_survival(double u, const PredictivePosterior& pp) {
  return (-pp.conditional_cumulative_hazard(u).array()).exp().mean();
}

SurvivalInverse survival_inverse(double p, const PredictivePosterior& pp) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("survival level must lie in (0, 1)");
  if (dynamic_survival(pp.horizon(), pp) > p) return {pp.horizon(), true};
  double lo = pp.state().t, hi = pp.horizon();
  while (hi - lo > pp.root_tol()) {
    const double mid = 0.5 * (lo + hi);
    if (dynamic_survival(mid, pp) > p) lo = mid;
    else hi = mid;
  }
  return {0.5 * (lo + hi), false};
}

TimeMoment expected_gr_time(const PredictivePosterior& pp) {
  const double tail = dynamic_survival(pp.horizon(), pp);
  const double integral = pp.mesh().weights.dot(pp.node_survival());
  return {pp.state().t + integral, tail > pp.tail_cap(), pp.horizon() * tail};
}

TimeMoment variance_gr_time(const PredictivePosterior& pp) {
  const double tail = dynamic_survival(pp.horizon(), pp);
  const auto& mesh = pp.mesh();
  const double i0 = mesh.weights.dot(pp.node_survival());
  const Eigen::VectorXd lag = mesh.nodes.array() - pp.state().t;
  const double i1 = mesh.weights.dot(lag.cwiseProduct(pp.node_survival()));
  return {std::max(0.0, 2.0 * i1 - i0 * i0), tail > pp.tail_cap(), pp.horizon() * tail};
}

SurvivalInverse quantile_gr_time(double q, const PredictivePosterior& pp) {
  if (!(q > 0.0 && q < 1.0)) throw DomainError("quantile level must lie in (0, 1)");
  return survival_inverse(1.0 - q, pp);
}

SurvivalCurve survival_curve(const PredictivePosterior& pp, double from, double to, int points) {
  if (points < 1) throw DomainError("survival curve needs at least one point");
  if (from < pp.state().t || to > pp.horizon() || to < from) throw DomainError("survival curve range outside [t, horizon]");
  SurvivalCurve c;
  for (int i = 0; i < points; ++i) {
    const double u = points == 1 ? from : from + (to - from) * i / (points - 1.0);
    c.u.push_back(u);
    c.prob.push_back(dynamic_survival(u, pp));
  }
  return c;
}

namespace {

// Linear-interpolation quantile of sorted values.
double sorted_quantile(const std::vector<double>& v, double p) {
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

std::vector<PsaBand> fitted_psa_curve(const PredictivePosterior& pp, const std::vector<double>& grid) {
  std::vector<PsaBand> out;
  out.reserve(grid.size());
  std::vector<double> vals(pp.size());
  for (double t : grid) {
    if (!(t >= 0.0)) throw DomainError("PSA curve times must be nonnegative");
    const DesignPoint d = design_at(t, pp.state().history.age_at_entry, pp.spec());
    double sum = 0.0;
    for (std::size_t j = 0; j < pp.size(); ++j) {
      const auto& pair = pp.pairs()[j];
      vals[j] = d.x.dot(pp.thetas()[pair.theta].beta) + d.z.dot(pair.b);
      sum += vals[j];
    }
    std::vector<double> sorted = vals;
    std::sort(sorted.begin(), sorted.end());
    out.push_back({t, sum / static_cast<double>(vals.size()), sorted_quantile(sorted, 0.025),
                   sorted_quantile(sorted, 0.975)});
  }
  return out;
}

}  // namespace asched
