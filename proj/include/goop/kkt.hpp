#pragma once

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "goop/expr.hpp"
#include "goop/model.hpp"

namespace goop {

enum class Role { kZ, kPsi, kPhi, kLambda, kGamma, kS };
enum class SystemKind { kReduced, kComplete, kPerturbedReduced, kPerturbedComplete };

const char* to_string(Role role);
const char* to_string(SystemKind kind);

/// Raised when the complete system would exceed the configured size cap.
class ComplexityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Segment {
  int player;  // 0-based
  int level;   // 1-based; 0 for z
  Role role;
  int offset;
  int length;
};

class VariableLayout {
 public:
  const Segment& append(int player, int level, Role role, int length);

  int dimension() const { return dimension_; }
  const std::vector<Segment>& segments() const { return segments_; }
  /// nullptr when absent.
  const Segment* find(int player, int level, Role role) const;
  /// All slots carrying the given role, in layout order.
  std::vector<int> slots(Role role) const;

 private:
  std::vector<Segment> segments_;
  int dimension_ = 0;
};

nlohmann::json to_json(const VariableLayout& layout);

enum class RowKind { kStationarity, kInducedStationarity, kEquality, kComplementarity, kSlack };

struct RowTag {
  int player;
  int level;     // level whose Lagrangian or constraint introduced the row
  RowKind kind;
  bool g_pair;   // complementarity with an original inequality g_r
  int index;     // position inside its group
};

/// Complementarity pair a(y)·γ: `a` is an expression, γ a layout slot.
struct ComplementarityPair {
  int player;
  int level;
  Expression a;
  int gamma_slot;
  int s_slot;    // -1 unless perturbed
};

struct SizeCount {
  long long variables = 0;
  long long f_rows = 0;
  long long g_rows = 0;
  long long system() const { return f_rows + g_rows; }
  friend bool operator==(const SizeCount&, const SizeCount&) = default;
  SizeCount& operator+=(const SizeCount& o) {
    variables += o.variables;
    f_rows += o.f_rows;
    g_rows += o.g_rows;
    return *this;
  }
};

SizeCount count_reduced(long long n, long long m_eq, long long m_ineq, int K);
SizeCount count_complete(long long n, long long m_eq, long long m_ineq, int K);
SizeCount count_reduced(const GoopProblem& p);
SizeCount count_complete(const GoopProblem& p);

/// Residual system F(y) = 0, G(y) >= 0 over a flat iterate y. Perturbed kinds
/// subtract ρ from the product rows, so F is K_ρ. Immutable; copies share data.
class KktSystem {
 public:
  SystemKind kind() const;
  bool perturbed() const;
  const VariableLayout& layout() const;
  const VariableSpace& space() const;
  int dimension() const { return layout().dimension(); }
  int f_rows() const;
  int g_rows() const;
  double rho() const { return rho_; }
  KktSystem with_rho(double rho) const;

  Eigen::VectorXd F(const Eigen::VectorXd& y) const;
  Eigen::VectorXd G(const Eigen::VectorXd& y) const;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& y) const;
  int jacobian_nonzeros() const;

  const std::vector<Expression>& f_expressions() const;
  const std::vector<Expression>& g_expressions() const;
  const std::vector<RowTag>& row_tags() const;
  const std::vector<ComplementarityPair>& pairs() const;
  /// Slots of s and paired γ entries; all must stay positive in a
  /// perturbed solve.
  const std::vector<int>& positive_slots() const;

  struct PlayerShape {
    int n, m_eq, m_ineq, levels;
  };
  const std::vector<PlayerShape>& player_shapes() const;
  /// Complete kinds only: tags of each player's rows in recursion order
  /// (outermost level first), before any slack rewriting.
  const std::vector<std::vector<RowTag>>& complete_row_tags() const;

  /// Level Lagrangians, [player][level-1], as assembled.
  const std::vector<std::vector<Expression>>& lagrangians() const;

  Eigen::VectorXd pack(const Candidate& c) const;
  Candidate unpack(const Eigen::VectorXd& y) const;

  struct Data;
  explicit KktSystem(std::shared_ptr<const Data> data, double rho = 0.0)
      : data_(std::move(data)), rho_(rho) {}

 private:
  std::shared_ptr<const Data> data_;
  double rho_ = 0.0;
};

inline constexpr long long kDefaultComplexityCap = 100000;

KktSystem assemble_reduced(const GoopProblem& p);
KktSystem assemble_complete(const GoopProblem& p, long long cap = kDefaultComplexityCap);
/// Perturbed reduced system K_ρ. Throws std::invalid_argument for ρ <= 0.
KktSystem assemble_perturbed(const GoopProblem& p, double rho);
/// The same slack-and-ρ perturbation applied to every complementarity pair
/// of the complete system.
KktSystem assemble_perturbed_complete(const GoopProblem& p, double rho,
                                      long long cap = kDefaultComplexityCap);

/// Max |analytic − central FD| over all Jacobian entries.
double jacobian_fd_check(const KktSystem& sys, const Eigen::VectorXd& y, double step = 1e-6);

class PreconditionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Maps a complete-system solution to reduced-system multipliers at the
/// same primal point. `complete` must be a complete (or perturbed complete)
/// system; its slacks are ignored. Throws PreconditionError if the input
/// residuals exceed tol.
Candidate lift_duals(const KktSystem& complete, const Candidate& solution, double tol = 1e-8);

/// Infinity-norm summary of a candidate in a reduced or complete system.
struct ResidualSummary {
  double f_inf = 0.0;          // ‖F‖∞ (unperturbed rows)
  double g_min = 0.0;          // min G (0 when there are no rows)
  double stationarity_inf = 0.0;
  double equality_inf = 0.0;
  double complementarity_inf = 0.0;
};
ResidualSummary residual_summary(const KktSystem& sys, const Eigen::VectorXd& y);

}  // namespace goop
