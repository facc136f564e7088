// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "goop/harness.hpp"
#include "goop/kkt.hpp"
#include "goop/linalg.hpp"
#include "goop/pdip.hpp"
#include "goop/quadratic.hpp"
#include "goop/sosc.hpp"

using namespace goop;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

// ---------------------------------------------------------------- populations

GeneratorConfig strict_config(int K, std::uint64_t seed) {
  GeneratorConfig c;
  c.seed = seed;
  c.N = 2;
  c.n = 2 * K;
  c.m_eq = 1;
  c.m_ineq = 2;
  c.K = K;
  c.normals_in_range = true;
  c.coupling = 0.2;
  return c;
}

struct StrictInstance {
  GeneratedInstance inst;
  KktPoint point;
};

// Instances whose only KKT point is strictly complementary.
std::vector<StrictInstance> strict_population(int K, int count) {
  std::vector<StrictInstance> out;
  for (std::uint64_t s = 0; static_cast<int>(out.size()) < count && s < 5000; ++s) {
    GeneratedInstance inst = gen_instance(strict_config(K, stream_seed(123 + K, s)));
    std::vector<KktPoint> pts = enumerate_kkt_points(*inst.quadratic);
    if (pts.size() == 1 && pts[0].strictly_complementary) out.push_back({std::move(inst), pts[0]});
  }
  return out;
}

const std::vector<StrictInstance>& quadratic_population() {
  static const std::vector<StrictInstance> pop = [] {
    std::vector<StrictInstance> all = strict_population(2, 25);
    for (auto& x : strict_population(3, 25)) all.push_back(std::move(x));
    return all;
  }();
  return pop;
}

const std::vector<SolveReport>& quadratic_solves() {
  static const std::vector<SolveReport> rs = [] {
    std::vector<SolveReport> out;
    for (const auto& x : quadratic_population()) out.push_back(solve(x.inst.problem, x.inst.z0));
    return out;
  }();
  return rs;
}

std::vector<GeneratedInstance> exp_population() {
  std::vector<GeneratedInstance> out;
  for (int s = 0; s < 20; ++s) {
    GeneratorConfig c;
    c.seed = stream_seed(77, s);
    c.family = Family::kExp;
    c.N = 2;
    c.n = 4;
    c.m_eq = 1;
    c.m_ineq = 1;
    c.K = 3;
    c.perturbation = 0.1;
    c.normals_in_range = true;
    out.push_back(gen_instance(c));
  }
  return out;
}

GeneratorConfig equality_config(int K, std::uint64_t seed) {
  GeneratorConfig c;
  c.seed = seed;
  c.N = 2;
  c.n = 3;
  c.m_eq = 1;
  c.K = K;
  return c;
}

bool reached_target(const SolveReport& r) {
  return r.status == SolveStatus::kConverged && r.final_rho <= 1e-10 * (1 + 1e-9) &&
         r.final_residual <= 1e-8;
}

// ---------------------------------------------------------------- criteria

Outcome sizes_exact() {
  const auto t = size_table(10, 3, 2, {2, 3, 4, 5, 6}, 4);
  const long long rs[] = {132, 188, 244, 300, 356}, rv[] = {128, 244, 408, 620, 880};
  const long long cs[] = {168, 368, 800, 1728, 3712}, cv[] = {136, 304, 672, 1472, 3200};
  int bad = 0;
  for (int j = 0; j < 5; ++j) {
    bad += t[j].reduced.system() != rs[j];
    bad += t[j].reduced.variables != rv[j];
    bad += t[j].complete.system() != cs[j];
    bad += t[j].complete.variables != cv[j];
  }
  return {bad == 0, fmt("%d/20 entries differ", bad)};
}

Outcome counts_agree() {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> Nd(1, 3), nd(1, 4), mid(0, 2), Kd(1, 4);
  int bad = 0;
  for (int t = 0; t < 50; ++t) {
    GeneratorConfig c;
    c.seed = stream_seed(2, t);
    c.N = Nd(rng);
    c.n = nd(rng);
    c.m_eq = std::uniform_int_distribution<int>(0, c.n - 1)(rng);
    c.m_ineq = std::min(mid(rng), c.n - c.m_eq);
    c.K = Kd(rng);
    const GoopProblem p = gen_instance(c).problem;
    SizeCount fr = count_reduced(c.n, c.m_eq, c.m_ineq, c.K), fc = count_complete(c.n, c.m_eq, c.m_ineq, c.K);
    SizeCount tr, tc;
    for (int i = 0; i < c.N; ++i) tr += fr, tc += fc;
    const SizeRow row = size_table(c.n, c.m_eq, c.m_ineq, {c.K}, c.N)[0];
    const KktSystem red = assemble_reduced(p), com = assemble_complete(p);
    const SizeCount ar{red.dimension(), red.f_rows(), red.g_rows()};
    const SizeCount ac{com.dimension(), com.f_rows(), com.g_rows()};
    bad += !(tr == row.reduced && row.reduced == ar && tc == row.complete && row.complete == ac);
  }
  return {bad == 0, fmt("%d/50 configurations disagree", bad)};
}

Outcome quadratic_primal_equivalence() {
  double worst = 0.0;
  int failed = 0;
  for (int t = 0; t < 100; ++t) {
    const int K = 2 + t % 3;
    try {
      const QuadraticRecursion rec = build_recursion(*gen_instance(equality_config(K, stream_seed(3, t))).quadratic);
      const LinearSolution a = solve_linear(rec, SystemKind::kReduced);
      const LinearSolution b = solve_linear(rec, SystemKind::kComplete);
      worst = std::max(worst, (a.z - b.z).norm() / (1 + b.z.norm()));
    } catch (const std::exception&) {
      ++failed;
    }
  }
  return {failed == 0 && worst <= 1e-6, fmt("max relative z gap %.2e over 100 instances, %d solve failures", worst, failed)};
}

Outcome inequality_equivalence() {
  double worst_z = 0.0, worst_res = 0.0;
  int failed = 0, used = 0, skipped = 0;
  for (int K = 2; K <= 3; ++K) {
    int used_k = 0;
    for (auto& x : strict_population(K, 40)) {
      if (used_k == 25) break;
      const QuadraticGoop& q = *x.inst.quadratic;
      const SolveReport r = solve(x.inst.problem, x.inst.z0);
      if (r.status != SolveStatus::kConverged) {
        ++skipped;
        continue;
      }
      ++used_k;
      try {
        const ActiveSetReduction red = active_set_reduce(q, r.candidate.z);
        const QuadraticRecursion rec = build_recursion(red.equality_problem);
        const LinearSolution com = solve_linear(rec, SystemKind::kComplete);
        worst_z = std::max(worst_z, (com.z - r.candidate.z).norm());

        const LinearSolution rsol = solve_linear(rec, SystemKind::kReduced);
        const Candidate eq = reduced_candidate(red.equality_problem, rec, rsol.v);
        const Candidate c = reconstruct_inequality_multipliers(q, red, eq);
        const KktSystem sys = assemble_reduced(lift_quadratic(q));
        const Eigen::VectorXd y = sys.pack(c);
        worst_res = std::max({worst_res, inf_norm(sys.F(y)), std::max(0.0, -sys.G(y).minCoeff())});
      } catch (const std::exception&) {
        ++failed;
      }
    }
    used += used_k;
  }
  const bool ok = used == 50 && failed == 0 && worst_z <= 1e-5 && worst_res <= 1e-8;
  return {ok, fmt("%d instances (%d more skipped: reduced PDIP did not converge), %d failures, max z gap %.2e, "
                  "max reconstruction residual %.2e",
                  used, skipped, failed, worst_z, worst_res)};
}

Outcome relaxation_lifts() {
  int attempted = 0, ok = 0;
  double worst = 0.0;
  auto lift = [&](const GoopProblem& p, const KktSystem& com, const Candidate& sol) {
    ++attempted;
    try {
      const Candidate c = lift_duals(com, sol);
      const KktSystem red = assemble_reduced(p);
      const double r = inf_norm(red.F(red.pack(c)));
      worst = std::max(worst, r);
      ok += r <= 1e-8;
    } catch (const std::exception&) {
    }
  };
  // Direct solves of equality-constrained complete systems.
  for (int t = 0; t < 20; ++t) {
    const GoopProblem p = gen_instance(equality_config(2 + t % 2, stream_seed(5, t))).problem;
    const KktSystem com = assemble_complete(p);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(com.dimension());
    y -= pinv_solve(com.jacobian(y), com.F(y));
    if (inf_norm(com.F(y)) <= 1e-9) lift(p, com, com.unpack(y));
  }
  // Complete-system PDIP solutions of inequality-constrained instances.
  const auto& pop = quadratic_population();
  for (std::size_t j = 0; j < pop.size(); j += 2) {
    const GoopProblem& p = pop[j].inst.problem;
    const SolveReport r = solve_complete(p, pop[j].inst.z0);
    if (r.status == SolveStatus::kConverged) lift(p, assemble_complete(p), r.candidate);
  }
  return {attempted > 0 && ok == attempted,
          fmt("%d/%d lifts with reduced residual <= 1e-8 (max %.2e)", ok, attempted, worst)};
}

Outcome inclusions() {
  int bad = 0;
  for (int t = 0; t < 100; ++t) {
    const QuadraticRecursion rec =
        build_recursion(*gen_instance(equality_config(2 + t % 3, stream_seed(6, t))).quadratic);
    bad += !verify_col_inclusions(rec, 1e-8).holds();
  }
  // Negative control: a column orthogonal to Col(R̄₁) appended to R₁.
  QuadraticRecursion rec = build_recursion(*gen_instance(equality_config(3, 6)).quadratic);
  bool caught = false;
  for (int k = 1; k <= rec.K && !caught; ++k) {
    const Eigen::MatrixXd left = null_space_basis(rec.R_bar[k - 1].transpose());
    if (left.cols() == 0) continue;
    QuadraticRecursion bad_rec = rec;
    auto& R = bad_rec.R[k - 1];
    Eigen::MatrixXd wider(R.rows(), R.cols() + 1);
    wider << R, left.col(0);
    R = wider;
    caught = !verify_col_inclusions(bad_rec, 1e-8).holds();
  }
  if (!caught) {
    for (int k = 1; k < rec.K && !caught; ++k) {
      const auto& Mb = rec.M_bar[k - 1];
      const Eigen::MatrixXd left = null_space_basis(Mb.rightCols(Mb.cols() - rec.n).transpose());
      if (left.cols() == 0) continue;
      QuadraticRecursion bad_rec = rec;
      auto& M = bad_rec.M[k - 1];
      Eigen::MatrixXd wider(M.rows(), M.cols() + 1);
      wider << M, left.col(0).head(M.rows());
      M = wider;
      caught = !verify_col_inclusions(bad_rec, 1e-8).holds();
    }
  }
  return {bad == 0 && caught, fmt("%d/100 instances fail an inclusion; corrupted column %s", bad,
                                  caught ? "detected" : "NOT detected")};
}

Outcome pdip_convergence() {
  int runs = 0, converged = 0, quadratic_tail = 0;
  auto count = [&](const SolveReport& r) {
    ++runs;
    if (!reached_target(r)) return;
    ++converged;
    quadratic_tail += r.tail.verdict == TailVerdict::kQuadratic;
  };
  for (const auto& r : quadratic_solves()) count(r);
  const int q_runs = runs, q_conv = converged;
  for (const auto& inst : exp_population()) count(solve(inst.problem, inst.z0));
  const double conv = static_cast<double>(converged) / runs;
  const double tail = converged ? static_cast<double>(quadratic_tail) / converged : 0.0;
  return {runs == 70 && conv >= 0.9 && tail >= 0.8,
          fmt("converged %d/%d (%.1f%%; quadratic %d/%d, class ii %d/%d), quadratic tail %d/%d (%.1f%%)",
              converged, runs, 100 * conv, q_conv, q_runs, converged - q_conv, runs - q_runs, quadratic_tail,
              converged, 100 * tail)};
}

Outcome central_path() {
  const auto& pop = quadratic_population();
  const std::vector<double> rhos{1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8};
  int in_range = 0, studied = 0;
  double lo = INFINITY, hi = -INFINITY;
  const auto& solves = quadratic_solves();
  int converged = 0;
  for (std::size_t j = 0; j < pop.size(); ++j) {
    if (solves[j].status != SolveStatus::kConverged || converged++ % 5 != 0) continue;
    const CentralPathStudy s = central_path_study(pop[j].inst.problem, pop[j].inst.z0, rhos);
    ++studied;
    bool all = s.fitted_points >= 3;
    for (const auto& x : s.samples) all = all && x.converged;
    lo = std::min(lo, s.slope);
    hi = std::max(hi, s.slope);
    in_range += all && s.slope >= 0.8 && s.slope <= 1.2;
  }
  return {in_range == studied, fmt("%d/%d instances with slope in [0.8, 1.2]; slopes span [%.3f, %.3f]", in_range,
                                   studied, lo, hi)};
}

Outcome jacobians() {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> pos(0.1, 2.0);
  std::normal_distribution<double> nd;
  const auto& pop = quadratic_population();
  const auto exps = exp_population();
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const GoopProblem& p = t % 2 == 0 ? pop[t % pop.size()].inst.problem : exps[t % exps.size()].problem;
    const KktSystem sys = assemble_perturbed(p, 1e-3);
    Eigen::VectorXd y(sys.dimension());
    for (int j = 0; j < y.size(); ++j) y[j] = 0.5 * nd(rng);
    for (int s : sys.positive_slots()) y[s] = pos(rng);
    worst = std::max(worst, jacobian_fd_check(sys, y));
  }
  return {worst <= 1e-5, fmt("max |analytic - FD| = %.2e over 50 (instance, point) pairs", worst)};
}

Outcome sosc() {
  auto var = [](int j) { return Expression::variable(kPrimalBlock, j); };
  auto one_level = [](Expression obj, std::vector<Expression> h, std::vector<Expression> g) {
    PlayerSpec s;
    s.n = 2;
    s.objectives = {std::move(obj)};
    s.h = std::move(h);
    s.g = std::move(g);
    GoopProblem p;
    p.players = {s};
    return p;
  };
  auto origin = [](const GoopProblem& p) {
    const KktSystem sys = assemble_reduced(p);
    return sys.unpack(Eigen::VectorXd::Zero(sys.dimension()));
  };
  SoscOptions opts;
  int ok = 0, total = 0;

  // Strictly convex: unconstrained, equality-restricted saddle, active strict bound.
  std::vector<std::pair<GoopProblem, Candidate>> convex;
  GoopProblem a = one_level(pow(var(0), 2) + pow(var(1), 2), {}, {});
  convex.emplace_back(a, origin(a));
  GoopProblem b = one_level(pow(var(0), 2) - pow(var(1), 2), {var(1)}, {});
  convex.emplace_back(b, origin(b));
  GoopProblem c = one_level(pow(var(0) - 2.0, 2) + pow(var(1), 2), {}, {Expression(1.0) - var(0)});
  Candidate cc = origin(c);
  cc.z[0] = 1.0;
  cc.players[0][0].gamma[0] = 2.0;
  convex.emplace_back(c, cc);
  for (const auto& [p, cand] : convex) {
    ++total;
    ok += certify(p, cand, opts).verdict == LevelVerdict::kCertifiedStrict;
  }

  // Saddles, unconstrained and with a weakly active bound: witness re-checked.
  for (const GoopProblem& p : {one_level(pow(var(0), 2) - pow(var(1), 2), {}, {}),
                               one_level(pow(var(0), 2) - pow(var(1), 2), {}, {var(0)})}) {
    ++total;
    const Candidate cand = origin(p);
    const Certificate cert = certify(p, cand, opts);
    const LevelReport& r = cert.levels.front();
    if (cert.verdict != LevelVerdict::kViolated || !r.witness) continue;
    const Witness& w = *r.witness;
    const double curv = level_curvature(p, cand, r.player, r.level, w.direction, w.alpha, w.delta);
    const double viol = cone_violation(cone_basis(p, cand, r.player, r.level, opts), w.direction);
    ok += curv < -opts.mu && viol <= 1e-9;
  }

  // T1: inner (z₁−1)², outer (z₂−3)², z₂ = z₁, |z_j| ≤ 5.
  PlayerSpec t;
  t.n = 2;
  t.objectives = {pow(var(1) - 3.0, 2), pow(var(0) - 1.0, 2)};
  t.h = {var(1) - var(0)};
  t.g = {Expression(5.0) - var(0), Expression(5.0) + var(0), Expression(5.0) - var(1), Expression(5.0) + var(1)};
  GoopProblem t1;
  t1.players = {t};
  ++total;
  const SolveReport r = solve(t1, Eigen::VectorXd::Zero(2));
  ok += r.status == SolveStatus::kConverged && certify(t1, r.candidate, opts).certified();
  return {ok == total, fmt("%d/%d constructed cases give the expected verdict (T1 included)", ok, total)};
}

Outcome k6_scaling() {
  // The count ratio depends only on the per-player shape, so solves use two
  // players of the n=10, m_E=3, m_I=2 shape.
  const SizeRow row = size_table(10, 3, 2, {6}, 4)[0];
  const double ratio = static_cast<double>(row.complete.system()) / row.reduced.system();
  int converged = 0, over_cap = 0, runs = 0;
  double worst_ratio = INFINITY;
  for (std::uint64_t s = 0; s < 3; ++s, ++runs) {
    GeneratorConfig c;
    c.seed = stream_seed(11, s);
    c.N = 2;
    c.n = 10;
    c.m_eq = 3;
    c.m_ineq = 2;
    c.K = 6;
    c.normals_in_range = true;
    c.coupling = 0.2;
    const GeneratedInstance inst = gen_instance(c);
    converged += solve(inst.problem, inst.z0).status == SolveStatus::kConverged;
    try {
      const KktSystem red = assemble_reduced(inst.problem), com = assemble_complete(inst.problem);
      worst_ratio = std::min(worst_ratio, static_cast<double>(com.f_rows() + com.g_rows()) /
                                              (red.f_rows() + red.g_rows()));
    } catch (const ComplexityError&) {
      ++over_cap;
    }
  }
  const bool larger = over_cap == runs || (ratio >= 10.0 && (over_cap > 0 || worst_ratio >= 10.0));
  return {converged == runs && larger,
          fmt("reduced PDIP converged %d/%d; size table %lld vs %lld rows (ratio %.2f); assembled ratio %.2f, "
              "%d over cap",
              converged, runs, row.reduced.system(), row.complete.system(), ratio, worst_ratio, over_cap)};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double time_limit_s;  // 0: none
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "size table for n=10, m_E=3, m_I=2, N=4, K=2..6", 1.0, sizes_exact},
      {2, "formulas = size_table = assembled dimensions", 30.0, counts_agree},
      {3, "equality quadratic: reduced vs complete z (rel 1e-6)", 120.0, quadratic_primal_equivalence},
      {4, "inequality quadratic: PDIP vs active-set complete z (1e-5), reconstruction (1e-8)", 300.0,
       inequality_equivalence},
      {5, "complete solutions lift to reduced residual <= 1e-8", 0.0, relaxation_lifts},
      {6, "column-space inclusions (1e-8) and negative control", 0.0, inclusions},
      {7, "PDIP: >= 90% reach 1e-8 at rho=1e-10, >= 80% quadratic tails", 0.0, pdip_convergence},
      {8, "central path log-log slope in [0.8, 1.2]", 300.0, central_path},
      {9, "analytic vs finite-difference Jacobian (1e-5)", 0.0, jacobians},
      {10, "second-order certifier verdicts", 0.0, sosc},
      {11, "K=6: reduced completes, complete over cap or >= 10x larger", 0.0, k6_scaling},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string limit;
    if (c.time_limit_s > 0) {
      limit = fmt(" (limit %.0f s)", c.time_limit_s);
      if (dt >= c.time_limit_s) o.pass = false;
    }
    failures += !o.pass;
    std::printf("%s  %2d  %s: %s [%.2f s%s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), dt,
                limit.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
