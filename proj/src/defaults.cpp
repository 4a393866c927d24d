#include "asched/defaults.hpp"

namespace asched {

Theta prias_posterior_means() {
  Theta theta;
  theta.beta.resize(7);
  theta.beta << 2.455, 0.003, -0.001, -0.006, 0.228, 0.140, 0.303;
  theta.gamma = Eigen::Vector2d(0.037, -0.001);
  theta.alpha = Eigen::Vector2d(-0.049, 2.407);
  theta.sigma2 = 0.324 * 0.324;
  theta.D.resize(3, 3);
  theta.D << 0.409, 0.105, -0.140,
             0.105, 1.725, 0.431,
             -0.140, 0.431, 1.326;
  theta.baseline = prias_subgroup_baseline(1);
  theta.hyper.psi_gamma = Eigen::VectorXd::Ones(2);
  theta.hyper.psi_alpha = Eigen::VectorXd::Ones(2);
  return theta;
}

WeibullBaseline prias_subgroup_baseline(int subgroup) {
  switch (subgroup) {
    case 0: return {1.5, 4.0};
    case 1: return {3.0, 5.0};
    case 2: return {4.5, 6.0};
    default: throw DomainError("subgroup index must be 0, 1 or 2");
  }
}

}  // namespace asched
