// goop: command-line front end for the solver, certifier and experiments.
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "goop/harness.hpp"
#include "goop/kkt.hpp"
#include "goop/model.hpp"
#include "goop/pdip.hpp"
#include "goop/sosc.hpp"

using namespace goop;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kSolverFailure = 1;
constexpr int kUsage = 2;

// Thrown for inputs that parse but cannot be used (wrong sizes and the like).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Eigen::VectorXd start_point(const GoopProblem& p, const std::vector<double>& z0) {
  if (z0.empty()) return Eigen::VectorXd::Zero(p.dimension());
  if (static_cast<int>(z0.size()) != p.dimension()) {
    throw UsageError("--z0 has " + std::to_string(z0.size()) + " entries, problem has " +
                     std::to_string(p.dimension()));
  }
  return Eigen::Map<const Eigen::VectorXd>(z0.data(), static_cast<Eigen::Index>(z0.size()));
}

void print(const json& j) { std::cout << j.dump(2) << "\n"; }

struct GenFlags {
  std::string family = "quadratic-rank2";
  std::uint64_t seed = 0;
  int count = 10, N = 2, n = 3, me = 1, mi = 0, K = 2, threads = 1;
  double perturbation = 0.0, coupling = 1.0;
  bool normals_in_range = false;
  long long cap = kDefaultComplexityCap;

  void add_to(CLI::App* app) {
    app->add_option("--family", family, "quadratic-rank2 | nonquadratic-quartic-top | nonquadratic-exp");
    app->add_option("--seed", seed, "Master seed");
    app->add_option("--count", count, "Instances")->check(CLI::NonNegativeNumber);
    app->add_option("--players", N, "Players")->check(CLI::PositiveNumber);
    app->add_option("--n", n, "Variables per player")->check(CLI::PositiveNumber);
    app->add_option("--me", me, "Equalities per player")->check(CLI::NonNegativeNumber);
    app->add_option("--mi", mi, "Inequalities per player")->check(CLI::NonNegativeNumber);
    app->add_option("--K", K, "Levels")->check(CLI::PositiveNumber);
    app->add_option("--perturbation", perturbation, "Std. dev. of the start offset");
    app->add_option("--coupling", coupling, "Cross-player scale");
    app->add_flag("--normals-in-range", normals_in_range,
                  "Draw own inequality normals from the innermost objective's range");
    app->add_option("--threads", threads)->check(CLI::PositiveNumber);
    app->add_option("--cap", cap, "Complete-system dimension cap");
  }

  GeneratorConfig config() const {
    GeneratorConfig c;
    c.seed = seed;
    c.N = N;
    c.n = n;
    c.m_eq = me;
    c.m_ineq = mi;
    c.K = K;
    c.family = family_from_string(family);
    c.perturbation = perturbation;
    c.coupling = coupling;
    c.normals_in_range = normals_in_range;
    c.check();
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reduced and complete KKT solvers for games of ordered preference"};
  app.require_subcommand(1);

  SolverOptions opts;
  std::vector<double> z0;
  auto add_solver_flags = [&](CLI::App* sub) {
    sub->add_option("--rho0", opts.rho0, "Initial ρ");
    sub->add_option("--sigma", opts.sigma, "ρ contraction per outer step");
    sub->add_option("--eps", opts.eps, "Inner tolerance");
    sub->add_option("--outer-steps", opts.outer_steps, "Number of ρ values");
    sub->add_option("--z0", z0, "Primal start (comma separated)")->delimiter(',');
  };

  std::string problem_path, candidate_path, trace_path;
  bool with_trace = false;

  auto* solve_cmd = app.add_subcommand("solve", "PDIP on the reduced system");
  solve_cmd->add_option("problem", problem_path)->required()->check(CLI::ExistingFile);
  add_solver_flags(solve_cmd);
  solve_cmd->add_option("--trace", trace_path, "Write the residual trace as CSV");
  solve_cmd->add_flag("--include-trace", with_trace, "Embed the trace in the JSON");

  long long cap = kDefaultComplexityCap;
  auto* complete_cmd = app.add_subcommand("solve-complete", "PDIP on the complete system");
  complete_cmd->add_option("problem", problem_path)->required()->check(CLI::ExistingFile);
  add_solver_flags(complete_cmd);
  complete_cmd->add_option("--trace", trace_path, "Write the residual trace as CSV");
  complete_cmd->add_option("--cap", cap, "Dimension cap");

  SoscOptions sosc;
  auto* certify_cmd = app.add_subcommand("certify", "Second-order check of a reduced-system point");
  certify_cmd->add_option("problem", problem_path)->required()->check(CLI::ExistingFile);
  certify_cmd->add_option("candidate", candidate_path, "Candidate JSON or a solve report")
      ->required()
      ->check(CLI::ExistingFile);
  certify_cmd->add_option("--samples", sosc.samples);
  certify_cmd->add_option("--mu", sosc.mu);
  certify_cmd->add_option("--delta", sosc.delta);
  certify_cmd->add_option("--seed", sosc.seed);

  long long sz_n = 10, sz_me = 3, sz_mi = 2;
  int sz_players = 4;
  std::vector<int> Ks{2, 3, 4, 5, 6};
  auto* sizes_cmd = app.add_subcommand("sizes", "Reduced and complete system sizes");
  sizes_cmd->add_option("--n", sz_n)->check(CLI::PositiveNumber);
  sizes_cmd->add_option("--me", sz_me)->check(CLI::NonNegativeNumber);
  sizes_cmd->add_option("--mi", sz_mi)->check(CLI::NonNegativeNumber);
  sizes_cmd->add_option("--K", Ks, "Levels (comma separated)")->delimiter(',')->check(CLI::PositiveNumber);
  sizes_cmd->add_option("--players", sz_players)->check(CLI::PositiveNumber);

  GenFlags gen;
  std::string out_path;
  auto* mc_cmd = app.add_subcommand("mc", "Reduced vs complete agreement over random instances");
  gen.add_to(mc_cmd);
  add_solver_flags(mc_cmd);
  mc_cmd->add_option("--out", out_path, "Write the JSON here instead of stdout");

  auto* scaling_cmd = app.add_subcommand("scaling", "Solve time of both formulations against K");
  gen.add_to(scaling_cmd);
  add_solver_flags(scaling_cmd);
  scaling_cmd->add_option("--Ks", Ks, "Levels (comma separated)")->delimiter(',')->check(CLI::PositiveNumber);
  scaling_cmd->add_option("--out", out_path, "Write the JSON here instead of stdout");

  std::vector<double> rhos{1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8};
  auto* path_cmd = app.add_subcommand("central-path", "Distance to the ρ → 0 solution along ρ");
  path_cmd->add_option("problem", problem_path)->required()->check(CLI::ExistingFile);
  add_solver_flags(path_cmd);
  path_cmd->add_option("--rhos", rhos, "ρ values (comma separated)")->delimiter(',');
  path_cmd->add_option("--out", out_path, "CSV of rho, converged, distance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    opts.check();
    if (*solve_cmd || *complete_cmd) {
      const GoopProblem p = load_problem(problem_path);
      const Eigen::VectorXd start = start_point(p, z0);
      SolveReport r = *solve_cmd ? solve(p, start, opts) : solve_complete(p, start, opts, cap);
      if (!trace_path.empty()) {
        std::ofstream f(trace_path);
        if (!f) throw UsageError("cannot write " + trace_path);
        write_trace_csv(r, f);
      }
      print(to_json(r, with_trace));
      return r.status == SolveStatus::kConverged ? kOk : kSolverFailure;
    }
    if (*certify_cmd) {
      const GoopProblem p = load_problem(problem_path);
      json cj = read_json_file(candidate_path);
      if (cj.contains("candidate")) cj = cj["candidate"];
      Candidate c;
      try {
        c = candidate_from_json(cj);
      } catch (const json::exception& e) {
        throw UsageError(std::string("candidate file: ") + e.what());
      }
      print(to_json(certify(p, c, sosc)));
      return kOk;
    }
    if (*sizes_cmd) {
      print(to_json(size_table(sz_n, sz_me, sz_mi, Ks, sz_players)));
      return kOk;
    }
    if (*mc_cmd || *scaling_cmd) {
      const GeneratorConfig cfg = gen.config();
      ExperimentResult r = *mc_cmd
                               ? run_equivalence_mc(cfg, gen.count, opts, gen.cap, gen.threads)
                               : run_scaling(cfg, Ks, gen.count, opts, gen.cap, gen.threads);
      const json j = to_json(r);
      if (out_path.empty()) {
        print(j);
      } else {
        std::ofstream f(out_path);
        if (!f) throw UsageError("cannot write " + out_path);
        f << j.dump(2) << "\n";
      }
      return kOk;
    }
    if (*path_cmd) {
      const GoopProblem p = load_problem(problem_path);
      CentralPathStudy s = central_path_study(p, start_point(p, z0), rhos, opts);
      json samples = json::array();
      for (const auto& x : s.samples) {
        samples.push_back({{"rho", x.rho}, {"converged", x.converged}, {"distance", x.distance}});
      }
      if (!out_path.empty()) {
        std::ofstream f(out_path);
        if (!f) throw UsageError("cannot write " + out_path);
        f << "rho,converged,distance\n";
        for (const auto& x : s.samples) {
          f << x.rho << "," << (x.converged ? 1 : 0) << "," << x.distance << "\n";
        }
      }
      print({{"slope", s.slope}, {"fitted_points", s.fitted_points}, {"samples", samples}});
      bool all = true;
      for (const auto& x : s.samples) all = all && x.converged;
      return all ? kOk : kSolverFailure;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const goop::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ModelError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return kSolverFailure;
  }
  return kUsage;
}
