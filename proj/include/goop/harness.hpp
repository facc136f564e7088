#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include "json.hpp"

#include "goop/kkt.hpp"
#include "goop/model.hpp"
#include "goop/pdip.hpp"

namespace goop {

enum class Family { kQuadraticRank2, kQuarticTop, kExp };
const char* to_string(Family f);
/// Accepts "quadratic-rank2", "nonquadratic-quartic-top", "nonquadratic-exp".
Family family_from_string(const std::string& s);

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GeneratorConfig {
  std::uint64_t seed = 0;
  int N = 2;
  int n = 3;        // per player
  int m_eq = 1;     // per player
  int m_ineq = 0;   // per player
  int K = 2;
  Family family = Family::kQuadraticRank2;
  double perturbation = 0.0;  // std. dev. of the N(0, σ²) offset of z0
  double margin = 1e-3;       // minimum inequality slack at the feasible point
  /// Own-block inequality normals drawn from the column space of the
  /// innermost Q^i instead of Gaussian.
  bool normals_in_range = false;
  /// Scale applied to every cross-player block: other players' rows of each
  /// factor A and other players' columns of H and G. 1 keeps the raw draws.
  double coupling = 1.0;

  void check() const;
};

nlohmann::json to_json(const GeneratorConfig& c);

/// SplitMix64 finaliser of master ⊕ index; instance i's stream does not
/// depend on any other instance.
std::uint64_t stream_seed(std::uint64_t master, std::uint64_t index);

struct GeneratedInstance {
  GoopProblem problem;
  std::optional<QuadraticGoop> quadratic;  // set for the quadratic family
  Eigen::VectorXd z_feasible;              // H z = h, G z >= g + margin
  Eigen::VectorXd z0;                      // z_feasible plus the perturbation
};

/// Deterministic in cfg. Quadratic family: Q_k^i = AAᵀ with A an n×2
/// Gaussian sample, q_k^i = Q_k^i c. Quartic family: the outermost
/// objective becomes (1ᵀz)⁴. Exp family: J_1 = ‖z‖², deeper levels
/// e^{vᵀz} + e^{−vᵀz} with unit v, and the first inequality of each player
/// is nonlinear: a slab around the innermost v when normals_in_range and
/// K > 1, a ball around a random centre otherwise. The rest are linear.
GeneratedInstance gen_instance(const GeneratorConfig& cfg);

struct SizeRow {
  int K;
  SizeCount reduced, complete;  // totals over N identical players
};

std::vector<SizeRow> size_table(long long n, long long m_eq, long long m_ineq,
                                const std::vector<int>& Ks, int N);
nlohmann::json to_json(const std::vector<SizeRow>& table);

struct TrimmedStats {
  double mean = 0.0;
  double stddev = 0.0;
  int kept = 0;
};

/// Drops floor(fraction·n) values from each tail, then mean and sample std.
TrimmedStats trimmed_stats(std::vector<double> values, double fraction = 0.025);

struct InstanceRecord {
  int seed_index = 0;
  int K = 0;
  SizeCount reduced, complete;
  std::string status;             // "ok", "reduced-failed", "complete-failed", "complete-skipped", ...
  double z_distance = -1.0;       // ‖z_red − z_com‖ (PDIP); negative when unavailable
  double direct_distance = -1.0;  // linear solves, equality quadratic only
  double time_s = 0.0;            // reduced solve loop
  double time_complete_s = 0.0;
};

struct ExperimentResult {
  GeneratorConfig config;
  std::vector<InstanceRecord> records;
};

/// Solves every instance with both formulations. Failures are recorded.
ExperimentResult run_equivalence_mc(const GeneratorConfig& cfg, int count,
                                    const SolverOptions& opts = {},
                                    long long cap = kDefaultComplexityCap, int threads = 1);

/// Times both formulations for each K; complete runs over the cap are
/// marked "complete-skipped".
ExperimentResult run_scaling(const GeneratorConfig& cfg, const std::vector<int>& Ks, int count,
                             const SolverOptions& opts = {},
                             long long cap = kDefaultComplexityCap, int threads = 1);

nlohmann::json to_json(const ExperimentResult& r);

}  // namespace goop
