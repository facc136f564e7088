#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "goop/kkt.hpp"
#include "goop/model.hpp"

namespace goop {

/// What one row or unknown of the padded quadratic recursion stands for.
struct RecursionLabel {
  enum Kind { kZ, kStationarity, kInducedStationarity, kEquality, kDual } kind;
  int level;   // level whose Lagrangian or multiplier block this is
  int index;   // z index, equality row, or position within the dual block
  // For kDual: the row of the level-(level+1) system it multiplies.
  Kind target_kind = kZ;
  int target_level = 0;
  int target_index = 0;
};

/// Nested linear systems M̄_k v̄ = p and M_k v = p of an equality-constrained
/// quadratic game, stored per level (index k−1). M_k carries the zero rows
/// and columns of the padded form; the `compact_*` views drop them.
struct QuadraticRecursion {
  int K = 0;
  int n = 0;
  int m_eq = 0;
  std::vector<Eigen::MatrixXd> R_bar, R, M_bar, M;
  std::vector<Eigen::VectorXd> p;
  std::vector<std::vector<RecursionLabel>> row_labels;  // rows of M̄_k and M_k
  std::vector<std::vector<RecursionLabel>> col_labels;  // entries of v̄_k and v_k

  /// Rows and columns that are not structurally zero in M_k.
  std::vector<int> live_rows(int k) const;
  std::vector<int> live_cols(int k) const;
  Eigen::MatrixXd compact_M(int k) const;
  Eigen::VectorXd compact_p(int k) const;
};

class NoKktPointError : public std::runtime_error {
 public:
  NoKktPointError(const std::string& what, double residual)
      : std::runtime_error(what), residual(residual) {}
  double residual;
};

class DegenerateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pads to a common K first. Throws PreconditionError if any player has
/// inequality constraints.
QuadraticRecursion build_recursion(const QuadraticGoop& p);

struct LinearSolution {
  Eigen::VectorXd z;
  Eigen::VectorXd v;   // compact reduced unknowns, or padded complete unknowns
  double residual = 0.0;
  int primal_null_dim = 0;  // dimension of the primal part of the solution set
};

/// Minimum-norm solve of M_1 v = p (reduced, compact form) or M̄_1 v̄ = p.
/// Throws NoKktPointError when p is not in the column space.
LinearSolution solve_linear(const QuadraticRecursion& rec, SystemKind kind, double tol = 1e-8);

/// Relative residual of the best v with the primal block fixed to z.
double primal_membership_residual(const QuadraticRecursion& rec, SystemKind kind,
                                  const Eigen::VectorXd& z);

struct InclusionLevel {
  int level;
  double r_residual;  // Col(R_k) in Col(R̄_k)
  double m_residual;  // Col(M_k^c) in Col(M̄_k^c); 0 at k = K
};

struct InclusionReport {
  std::vector<InclusionLevel> levels;
  double tol = 0.0;
  bool holds() const;
};

InclusionReport verify_col_inclusions(const QuadraticRecursion& rec, double tol = 1e-8);

struct ActiveSetReduction {
  QuadraticGoop equality_problem;
  std::vector<std::vector<int>> active;  // per player, rows of G^i
  bool regular = true;                   // stacked own blocks of H̃ full row rank
  std::vector<std::string> warnings;
};

ActiveSetReduction active_set_reduce(const QuadraticGoop& p, const Eigen::VectorXd& z_star,
                                     double act_tol = 1e-6);

/// Reduced-system candidate (kkt-module layout and signs) for the problem the
/// recursion was built from, from a compact reduced solution.
Candidate reduced_candidate(const QuadraticGoop& p, const QuadraticRecursion& rec,
                            const Eigen::VectorXd& v_compact);

/// Inverse of reduced_candidate.
Eigen::VectorXd compact_unknowns(const QuadraticGoop& p, const QuadraticRecursion& rec,
                                 const Candidate& c);

/// Builds inequality-form multipliers from an equality-form candidate of the
/// active-set-reduced problem. Throws DegenerateError when an innermost
/// active multiplier is at or below strict_tol.
Candidate reconstruct_inequality_multipliers(const QuadraticGoop& inequality_problem,
                                             const ActiveSetReduction& reduction,
                                             const Candidate& equality_solution,
                                             double strict_tol = 1e-6);

struct KktPoint {
  std::vector<std::vector<int>> active;  // per player
  Candidate candidate;                   // reduced system of the padded problem
  double residual = 0.0;                 // ‖F‖∞ of the inequality-form candidate
  bool strictly_complementary = false;
};

/// Every reduced KKT point reachable by an active-set guess, found by trying
/// all 2^(Σ m_I^i) guesses with direct linear solves. Points are deduplicated
/// by z. Throws std::invalid_argument above 20 inequality rows in total.
std::vector<KktPoint> enumerate_kkt_points(const QuadraticGoop& p, double tol = 1e-8,
                                           double strict_tol = 1e-6);

void write_matrix_csv(const Eigen::MatrixXd& m, std::ostream& out);

}  // namespace goop
