#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>
#include "json.hpp"

#include "goop/expr.hpp"

namespace goop {

/// Name of the single primal block. Player i owns the contiguous slice
/// [offset_i, offset_i + n^i) of it.
inline constexpr const char* kPrimalBlock = "z";

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PlayerSpec {
  int n = 0;
  /// objectives[k-1] is J_k; the last entry is the innermost level.
  std::vector<Expression> objectives;
  std::vector<Expression> h;  // h(z) = 0
  std::vector<Expression> g;  // g(z) >= 0

  int levels() const { return static_cast<int>(objectives.size()); }
  int m_eq() const { return static_cast<int>(h.size()); }
  int m_ineq() const { return static_cast<int>(g.size()); }
};

struct GoopProblem {
  std::vector<PlayerSpec> players;

  int player_count() const { return static_cast<int>(players.size()); }
  int dimension() const;
  int offset(int player) const;
  int max_levels() const;
  VariableSpace primal_space() const;
};

struct QuadraticPlayer {
  int n = 0;
  std::vector<Eigen::MatrixXd> Q;  // per level, n_total x n_total, symmetric
  std::vector<Eigen::VectorXd> q;  // per level, n_total
  Eigen::MatrixXd H;               // m_E x n_total
  Eigen::VectorXd h;
  Eigen::MatrixXd G;               // m_I x n_total, G z >= g
  Eigen::VectorXd g;

  int levels() const { return static_cast<int>(Q.size()); }
  int m_eq() const { return static_cast<int>(H.rows()); }
  int m_ineq() const { return static_cast<int>(G.rows()); }
};

struct QuadraticGoop {
  std::vector<QuadraticPlayer> players;

  int player_count() const { return static_cast<int>(players.size()); }
  int dimension() const;
  int offset(int player) const;
  int max_levels() const;
  bool has_inequalities() const;
};

struct ValidationReport {
  std::vector<std::string> warnings;
  std::vector<std::string> assumed;  // conditions taken on trust
  bool ok() const { return warnings.empty(); }
};

/// Structural problems throw ModelError; checkable regularity failures are
/// returned as warnings.
ValidationReport validate(const GoopProblem& p);
ValidationReport validate(const QuadraticGoop& p);

/// Block-diagonal matrix of each player's own-column block of H^i.
Eigen::MatrixXd stacked_own_block(const QuadraticGoop& p, bool inequalities);

/// Appends zero-objective inner levels so every player has exactly K levels.
QuadraticGoop pad_levels(const QuadraticGoop& p, int K);
GoopProblem pad_levels(const GoopProblem& p, int K);

/// Expression form: J_k = ½zᵀQ_k z + q_kᵀz, h = Hz − h, g = Gz − g.
GoopProblem lift_quadratic(const QuadraticGoop& p);

/// Per-level dual blocks of one player. For the complete system the same
/// roles hold the complete-system multipliers, with their own lengths.
struct LevelDuals {
  Eigen::VectorXd psi, phi, lambda, gamma, s;
};

struct Candidate {
  Eigen::VectorXd z;
  std::vector<std::vector<LevelDuals>> players;  // [player][level-1]
};

GoopProblem problem_from_json(const nlohmann::json& j);
QuadraticGoop quadratic_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GoopProblem& p);
nlohmann::json to_json(const QuadraticGoop& p);
nlohmann::json to_json(const Candidate& c);
Candidate candidate_from_json(const nlohmann::json& j);

/// Accepts either file shape; quadratic problems are lifted.
GoopProblem load_problem(const std::string& path);
nlohmann::json read_json_file(const std::string& path);

}  // namespace goop
