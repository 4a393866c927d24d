#include "asched/quadrature.hpp"

#include <algorithm>

namespace asched {

namespace {

constexpr std::array<double, 8> kXgk = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
constexpr std::array<double, 8> kWgk = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr std::array<double, 4> kWg = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

// Legendre P_0..P_n at x.
Eigen::VectorXd legendre(double x, int n) {
  Eigen::VectorXd p(n + 1);
  p[0] = 1.0;
  if (n >= 1) p[1] = x;
  for (int k = 1; k < n; ++k) p[k + 1] = ((2.0 * k + 1.0) * x * p[k] - k * p[k - 1]) / (k + 1.0);
  return p;
}

// integral_{-1}^{x} P_k for k = 0..14.
Eigen::Matrix<double, 1, 15> legendre_integrals(double x) {
  const Eigen::VectorXd p = legendre(x, 15);
  Eigen::Matrix<double, 1, 15> out;
  out[0] = x + 1.0;
  for (int k = 1; k < 15; ++k) out[k] = (p[k + 1] - p[k - 1]) / (2.0 * k + 1.0);
  return out;
}

}  // namespace

const std::array<double, 15>& GaussKronrod15::nodes() {
  static const std::array<double, 15> x = [] {
    std::array<double, 15> out{};
    for (int i = 0; i < 8; ++i) {
      out[i] = -kXgk[i];
      out[14 - i] = kXgk[i];
    }
    return out;
  }();
  return x;
}

const std::array<double, 15>& GaussKronrod15::kronrod_weights() {
  static const std::array<double, 15> w = [] {
    std::array<double, 15> out{};
    for (int i = 0; i < 8; ++i) out[i] = out[14 - i] = kWgk[i];
    return out;
  }();
  return w;
}

const std::array<double, 15>& GaussKronrod15::gauss_weights() {
  static const std::array<double, 15> w = [] {
    std::array<double, 15> out{};
    // Gauss nodes are the odd-indexed Kronrod nodes 1, 3, 5, 7.
    for (int j = 0; j < 4; ++j) {
      const int i = 2 * j + 1;
      out[i] = out[14 - i] = kWg[j];
    }
    return out;
  }();
  return w;
}

namespace {

// Inverse of V(i, k) = P_k(x_i) over the Kronrod nodes.
const Eigen::Matrix<double, 15, 15>& inverse_vandermonde() {
  static const Eigen::Matrix<double, 15, 15> vinv = [] {
    const auto& x = GaussKronrod15::nodes();
    Eigen::Matrix<double, 15, 15> v;
    for (int i = 0; i < 15; ++i) v.row(i) = legendre(x[i], 14).transpose();
    return Eigen::Matrix<double, 15, 15>(v.partialPivLu().inverse());
  }();
  return vinv;
}

}  // namespace

const Eigen::Matrix<double, 15, 15>& GaussKronrod15::cumulative_matrix() {
  static const Eigen::Matrix<double, 15, 15> a = [] {
    const auto& x = nodes();
    Eigen::Matrix<double, 15, 15> w;
    for (int i = 0; i < 15; ++i) w.row(i) = legendre_integrals(x[i]);
    return Eigen::Matrix<double, 15, 15>(w * inverse_vandermonde());
  }();
  return a;
}

Eigen::Matrix<double, 1, 15> GaussKronrod15::cumulative_row(double x) {
  return legendre_integrals(x) * inverse_vandermonde();
}

QuadratureMesh QuadratureMesh::build(double a, double b, std::span<const double> breakpoints,
                                     double max_width, int grading_levels) {
  if (b < a) throw DomainError("quadrature mesh: upper limit below lower limit");
  QuadratureMesh mesh;
  if (b == a) {
    mesh.edges = {a};
    return mesh;
  }
  std::vector<double> cuts{a, b};
  for (double p : breakpoints)
    if (p > a && p < b) cuts.push_back(p);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double lo = cuts[i], hi = cuts[i + 1];
    const int pieces = std::max(1, static_cast<int>(std::ceil((hi - lo) / max_width - 1e-12)));
    for (int k = 0; k < pieces; ++k) mesh.edges.push_back(lo + (hi - lo) * k / pieces);
  }
  mesh.edges.push_back(b);
  if (a == 0.0 && grading_levels > 0) {
    const double first = mesh.edges[1];
    std::vector<double> graded;
    for (int k = grading_levels; k >= 1; --k) graded.push_back(first * std::pow(10.0, -k));
    mesh.edges.insert(mesh.edges.begin() + 1, graded.begin(), graded.end());
  }

  const auto& x = GaussKronrod15::nodes();
  const auto& w = GaussKronrod15::kronrod_weights();
  const Eigen::Index np = mesh.panels();
  mesh.nodes.resize(15 * np);
  mesh.weights.resize(15 * np);
  for (Eigen::Index p = 0; p < np; ++p) {
    const double half = 0.5 * (mesh.edges[p + 1] - mesh.edges[p]);
    const double mid = 0.5 * (mesh.edges[p + 1] + mesh.edges[p]);
    for (int i = 0; i < 15; ++i) {
      mesh.nodes[15 * p + i] = mid + half * x[i];
      mesh.weights[15 * p + i] = half * w[i];
    }
  }
  return mesh;
}

}  // namespace asched
