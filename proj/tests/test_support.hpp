#pragma once

#include <random>

#include "goop/linalg.hpp"
#include "goop/model.hpp"

namespace goop::testing {

inline Expression z(int j) { return Expression::variable(kPrimalBlock, j); }

/// One player, two variables, two levels: z₂ = z₁, |z_j| ≤ 5, inner
/// objective (z₁−1)², outer objective (z₂−3)². Solution z = (1, 1).
inline GoopProblem t1_problem() {
  PlayerSpec p;
  p.n = 2;
  p.objectives = {pow(z(1) - 3.0, 2), pow(z(0) - 1.0, 2)};
  p.h = {z(1) - z(0)};
  p.g = {Expression(5.0) - z(0), Expression(5.0) + z(0), Expression(5.0) - z(1),
         Expression(5.0) + z(1)};
  GoopProblem g;
  g.players = {p};
  return g;
}

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int r, int c) {
  std::normal_distribution<double> nd;
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = nd(rng);
  return m;
}

inline Eigen::VectorXd random_vector(std::mt19937_64& rng, int r) {
  return random_matrix(rng, r, 1);
}

/// Solves a linear residual F(y) = 0 by one pseudoinverse Newton step.
template <typename System>
Eigen::VectorXd solve_linear_residual(const System& sys, const Eigen::VectorXd& y0) {
  Eigen::VectorXd f = sys.F(y0);
  return y0 - pinv_solve(sys.jacobian(y0), f);
}

}  // namespace goop::testing
