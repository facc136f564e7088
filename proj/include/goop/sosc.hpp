#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include "json.hpp"

#include "goop/kkt.hpp"
#include "goop/model.hpp"

namespace goop {

enum class LevelVerdict { kCertifiedStrict, kCertified, kIndeterminate, kViolated, kSkipped };
const char* to_string(LevelVerdict v);

struct SoscOptions {
  double mu = 1e-8;               // curvature slack
  int samples = 200;
  double epsilon = 0.0;           // sampled directions lie within ε of the cone
  double delta = 1e-3;            // step scale of the perturbed points
  double activity_tol = 1e-6;
  double strict_tol = 1e-6;       // γ above this is strictly active
  double stationarity_tol = 1e-6; // on ∇_η L_k
  double residual_tol = 1e-6;     // candidate must solve the reduced system this well
  double rank_tol = 1e-9;         // relative, for cone bases
  std::uint64_t seed = 0;

  void check() const;
};

/// Decision variables of player i's level-k subproblem: z^i followed by the
/// player's multipliers of levels k+1..K^i, as slots of the reduced layout.
/// Inequality rows are g (multiplier γ_k) followed by γ_{k+1..K} ≥ 0.
struct LevelActiveSet {
  int player = 0;
  int level = 0;
  std::vector<int> active;  // rows with |G| <= tol
  std::vector<int> strict;  // active rows whose multiplier exceeds tol
};

std::vector<LevelActiveSet> active_sets(const GoopProblem& p, const Candidate& c,
                                        double tol = 1e-6);

/// ‖∇_{η_{k+1:K}} L_k^i‖∞; 0 at the innermost level.
double check_dual_stationarity(const GoopProblem& p, const Candidate& c, int player, int level);

struct ConeBasis {
  Eigen::MatrixXd lineality;  // orthonormal; equality and every active row tight
  Eigen::MatrixXd span;       // orthonormal; equality and strictly active rows tight
  Eigen::MatrixXd weak_rows;  // gradients of the weakly active rows; cone needs these · d >= 0
  Eigen::MatrixXd equality_rows;
  Eigen::MatrixXd strict_rows;
  std::vector<int> slots;     // reduced-layout slot of each coordinate
};

ConeBasis cone_basis(const GoopProblem& p, const Candidate& c, int player, int level,
                     const SoscOptions& opts = {});

/// pᵀ ∇²L_k^i p at (z^i, η_{k+1:K}) + α·δ·p with η_k held at the candidate.
/// `direction` uses the coordinates of cone_basis().
double level_curvature(const GoopProblem& p, const Candidate& c, int player, int level,
                       const Eigen::VectorXd& direction, double alpha, double delta);

/// Largest violation of the critical-cone conditions by a direction:
/// max(|E d|, |A⁺ d|, −min(A_weak d)).
double cone_violation(const ConeBasis& cone, const Eigen::VectorXd& direction);

struct Witness {
  Eigen::VectorXd direction;  // unit, in cone_basis() coordinates
  double alpha = 0.0;
  double delta = 0.0;
  double curvature = 0.0;
};

struct LevelReport {
  int player = 0;
  int level = 0;
  LevelVerdict verdict = LevelVerdict::kIndeterminate;
  double dual_stationarity = 0.0;
  double min_eigenvalue = 0.0;    // NaN when the eigenvalue stage did not run
  double min_curvature = 0.0;     // over samples; NaN when sampling did not run
  int samples = 0;
  int lineality_dim = 0;
  std::optional<Witness> witness;
  std::string note;
};

LevelReport certify_level(const GoopProblem& p, const Candidate& c, int player, int level,
                          const SoscOptions& opts = {});

struct Certificate {
  LevelVerdict verdict = LevelVerdict::kIndeterminate;
  std::vector<LevelReport> levels;  // evaluation order; short-circuited levels are kSkipped

  /// certified or certified-strict.
  bool certified() const;
};

/// Per player, levels K^i down to 1; a certified-strict level skips the ones
/// above it. Throws std::invalid_argument on a shape mismatch and
/// PreconditionError when the candidate does not solve the reduced system
/// within opts.residual_tol.
Certificate certify(const GoopProblem& p, const Candidate& c, const SoscOptions& opts = {});

nlohmann::json to_json(const Certificate& cert);

}  // namespace goop
