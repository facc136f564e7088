#pragma once

#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "goop/kkt.hpp"
#include "goop/model.hpp"

namespace goop {

struct SolverOptions {
  double rho0 = 1.0;
  double sigma = 0.1;             // ρ contraction per outer step
  double beta = 0.5;              // backtracking factor
  double eps = 1e-8;              // inner tolerance on ‖K_ρ‖₂, also the α floor
  int outer_steps = 11;           // ρ ∈ {ρ0, σρ0, …, σ^(outer_steps−1) ρ0}
  int max_inner = 200;
  double rank_tol = -1;           // relative SVD cutoff; negative selects the default
  double positivity_floor = 1e-2; // lower bound for initial slacks

  /// Throws std::invalid_argument when a field is out of range.
  void check() const;
};

enum class SolveStatus { kConverged, kLineSearchFailure, kMaxIterations, kNumericFailure };
const char* to_string(SolveStatus s);

struct TraceRow {
  double rho;
  int inner_iter;
  double residual;
  double alpha;        // 0 on the first row of each block
  double min_s_gamma;  // min over pairs of s·γ
};

struct RhoBlock {
  double rho;
  SolveStatus status;
  int iterations;
  double residual;
};

enum class TailVerdict { kQuadratic, kNotQuadratic, kInconclusive };
const char* to_string(TailVerdict v);

struct TailFit {
  TailVerdict verdict = TailVerdict::kInconclusive;
  double c = 0.0;                 // r_{t+1} ≈ c r_t²
  double max_error_decades = 0.0; // worst log10 prediction error of the quadratic model
  int points = 0;                 // residuals used
};

struct SolveReport {
  SolveStatus status = SolveStatus::kNumericFailure;
  Eigen::VectorXd y;
  Candidate candidate;
  std::vector<TraceRow> trace;
  std::vector<RhoBlock> blocks;
  TailFit tail;              // fitted on the first ρ block
  double wall_time_s = 0.0;
  double final_rho = 0.0;
  double final_residual = 0.0;
  double min_s_gamma = 0.0;
  double max_violation = 0.0;  // max(‖h‖∞, −min g) over the candidate
  double jacobian_condition = 0.0;
  int jacobian_rank = 0;
  bool all_blocks_converged = false;
};

/// Starting iterate for a perturbed system: z = z0, pairs processed from the
/// deepest level outward with s = max(a, floor), γ = ρ/s; other duals 0.
Eigen::VectorXd initialize(const KktSystem& perturbed, const Eigen::VectorXd& z0,
                           const SolverOptions& opts);
Candidate initialize(const GoopProblem& p, const Eigen::VectorXd& z0, const SolverOptions& opts);

/// Δy = −(∇K_ρ)⁺ K_ρ. Throws NumericError on non-finite data.
Eigen::VectorXd newton_step(const KktSystem& sys, const Eigen::VectorXd& y,
                            const SolverOptions& opts);

struct LineSearchResult {
  bool accepted = false;
  double alpha = 0.0;
  Eigen::VectorXd y;
  double residual = 0.0;
};
LineSearchResult line_search(const KktSystem& sys, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& dy, const SolverOptions& opts);

/// Runs the ρ schedule on a perturbed system from an initial iterate.
SolveReport solve_system(const KktSystem& perturbed, const Eigen::VectorXd& y0,
                         const SolverOptions& opts);
/// Reduced system solve from primal start z0.
SolveReport solve(const GoopProblem& p, const Eigen::VectorXd& z0, const SolverOptions& opts = {});
/// Same loop on the perturbed complete system.
SolveReport solve_complete(const GoopProblem& p, const Eigen::VectorXd& z0,
                           const SolverOptions& opts = {},
                           long long cap = kDefaultComplexityCap);

/// Fits r_{t+1} ≈ c r_t² over the last `window` residuals that lie in
/// (noise_floor, threshold]; window 0 keeps them all. Quadratic when every
/// step is predicted within 0.5 decades and the fit beats r_{t+1} ≈ a r_t.
TailFit quadratic_tail_fit(const std::vector<double>& residuals,
                           double threshold = std::numeric_limits<double>::infinity(),
                           double noise_floor = 1e-11, int window = 3);
/// Uses the full-step suffix of the first ρ block of a report.
TailFit quadratic_tail_fit(const SolveReport& report,
                           double threshold = std::numeric_limits<double>::infinity());

struct CentralPathSample {
  double rho;
  bool converged;
  Eigen::VectorXd y;
  double distance;  // to the iterate at the smallest ρ
};

struct CentralPathStudy {
  std::vector<CentralPathSample> samples;
  double slope = 0.0;
  int fitted_points = 0;
};

/// Solves at each ρ (sorted descending, warm-started) and regresses
/// log distance on log ρ over samples with distance > 10·eps.
CentralPathStudy central_path_study(const GoopProblem& p, const Eigen::VectorXd& z0,
                                    std::vector<double> rhos, const SolverOptions& opts = {});

void write_trace_csv(const SolveReport& report, std::ostream& out);
nlohmann::json to_json(const SolveReport& report, bool include_trace = false);

}  // namespace goop
