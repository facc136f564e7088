#include "goop/pdip.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include <Eigen/SVD>

#include "goop/linalg.hpp"

namespace goop {

using nlohmann::json;

void SolverOptions::check() const {
  if (!(rho0 > 0)) throw std::invalid_argument("rho0 must be positive");
  if (!(sigma > 0 && sigma < 1)) throw std::invalid_argument("sigma must lie in (0,1)");
  if (!(beta > 0 && beta < 1)) throw std::invalid_argument("beta must lie in (0,1)");
  if (!(eps > 0)) throw std::invalid_argument("eps must be positive");
  if (outer_steps < 1) throw std::invalid_argument("outer_steps must be >= 1");
  if (max_inner < 1) throw std::invalid_argument("max_inner must be >= 1");
  if (!(positivity_floor > 0)) throw std::invalid_argument("positivity_floor must be positive");
}

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::kConverged: return "converged";
    case SolveStatus::kLineSearchFailure: return "line-search-failure";
    case SolveStatus::kMaxIterations: return "max-iterations";
    case SolveStatus::kNumericFailure: return "numeric-failure";
  }
  return "?";
}

const char* to_string(TailVerdict v) {
  switch (v) {
    case TailVerdict::kQuadratic: return "quadratic";
    case TailVerdict::kNotQuadratic: return "not-quadratic";
    case TailVerdict::kInconclusive: return "inconclusive";
  }
  return "?";
}

// ---------------------------------------------------------------- pieces

Eigen::VectorXd initialize(const KktSystem& sys, const Eigen::VectorXd& z0,
                           const SolverOptions& opts) {
  if (!sys.perturbed()) throw std::invalid_argument("initialize needs a perturbed system");
  const int n = sys.space().block_dimension(kPrimalBlock);
  if (z0.size() != n) throw std::invalid_argument("z0 has the wrong dimension");
  if (!z0.allFinite()) throw NumericError("z0 has non-finite entries");
  Eigen::VectorXd y = Eigen::VectorXd::Zero(sys.dimension());
  y.head(n) = z0;
  std::vector<std::size_t> order(sys.pairs().size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return sys.pairs()[a].level > sys.pairs()[b].level;
  });
  for (std::size_t j : order) {
    const auto& pr = sys.pairs()[j];
    double a = evaluate(pr.a, sys.space(), y);
    if (!std::isfinite(a)) throw NumericError("constraint value at z0 is not finite");
    double s = std::max(a, opts.positivity_floor);
    y[pr.s_slot] = s;
    y[pr.gamma_slot] = sys.rho() / s;
  }
  return y;
}

Candidate initialize(const GoopProblem& p, const Eigen::VectorXd& z0, const SolverOptions& opts) {
  KktSystem sys = assemble_perturbed(p, opts.rho0);
  return sys.unpack(initialize(sys, z0, opts));
}

Eigen::VectorXd newton_step(const KktSystem& sys, const Eigen::VectorXd& y,
                            const SolverOptions& opts) {
  Eigen::VectorXd k = sys.F(y);
  return -pinv_solve(sys.jacobian(y), k, opts.rank_tol);
}

namespace {

bool positive_at(const KktSystem& sys, const Eigen::VectorXd& y) {
  for (int s : sys.positive_slots()) {
    if (!(y[s] > 0)) return false;
  }
  return true;
}

double min_s_gamma(const KktSystem& sys, const Eigen::VectorXd& y) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& pr : sys.pairs()) m = std::min(m, y[pr.s_slot] * y[pr.gamma_slot]);
  return sys.pairs().empty() ? 0.0 : m;
}

}  // namespace

LineSearchResult line_search(const KktSystem& sys, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& dy, const SolverOptions& opts) {
  const double r0 = sys.F(y).norm();
  LineSearchResult out;
  double alpha = 1.0;
  while (alpha >= opts.eps) {
    Eigen::VectorXd trial = y + alpha * dy;
    if (positive_at(sys, trial)) {
      double r = sys.F(trial).norm();
      if (std::isfinite(r) && r <= r0) {
        out.accepted = true;
        out.alpha = alpha;
        out.y = std::move(trial);
        out.residual = r;
        return out;
      }
    }
    alpha *= opts.beta;
  }
  out.alpha = alpha;
  out.y = y;
  out.residual = r0;
  return out;
}

// ---------------------------------------------------------------- solve loop

SolveReport solve_system(const KktSystem& perturbed, const Eigen::VectorXd& y0,
                         const SolverOptions& opts) {
  opts.check();
  if (!perturbed.perturbed()) throw std::invalid_argument("solve_system needs a perturbed system");
  auto start = std::chrono::steady_clock::now();
  SolveReport rep;
  Eigen::VectorXd y = y0;
  double rho = opts.rho0;
  bool all_ok = true;
  SolveStatus last = SolveStatus::kConverged;

  for (int outer = 0; outer < opts.outer_steps; ++outer, rho *= opts.sigma) {
    KktSystem sys = perturbed.with_rho(rho);
    double r = sys.F(y).norm();
    rep.trace.push_back({rho, 0, r, 0.0, min_s_gamma(sys, y)});
    int it = 0;
    SolveStatus status = SolveStatus::kConverged;
    while (r > opts.eps) {
      if (it >= opts.max_inner) {
        status = SolveStatus::kMaxIterations;
        break;
      }
      Eigen::VectorXd dy;
      try {
        dy = newton_step(sys, y, opts);
      } catch (const NumericError&) {
        status = SolveStatus::kNumericFailure;
        break;
      }
      LineSearchResult ls = line_search(sys, y, dy, opts);
      if (!ls.accepted) {
        status = SolveStatus::kLineSearchFailure;
        break;
      }
      ++it;
      y = std::move(ls.y);
      r = ls.residual;
      rep.trace.push_back({rho, it, r, ls.alpha, min_s_gamma(sys, y)});
    }
    rep.blocks.push_back({rho, status, it, r});
    if (status != SolveStatus::kConverged) all_ok = false;
    last = status;
    rep.final_rho = rho;
    rep.final_residual = r;
    if (status == SolveStatus::kNumericFailure) break;
  }
  rep.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  rep.status = last;
  rep.all_blocks_converged = all_ok;
  rep.y = y;
  rep.candidate = perturbed.unpack(y);
  KktSystem fin = perturbed.with_rho(rep.final_rho);
  rep.min_s_gamma = min_s_gamma(fin, y);
  double viol = 0.0;
  Eigen::VectorXd f = fin.F(y);
  for (int r = 0; r < fin.f_rows(); ++r) {
    if (fin.row_tags()[r].kind == RowKind::kEquality) viol = std::max(viol, std::abs(f[r]));
  }
  Eigen::VectorXd g = fin.G(y);
  if (g.size() > 0) viol = std::max(viol, -g.minCoeff());
  rep.max_violation = viol;
  if (y.allFinite()) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(fin.jacobian(y));
    const auto& sv = svd.singularValues();
    double tol = opts.rank_tol >= 0 ? opts.rank_tol
                                    : static_cast<double>(std::max(f.size(), y.size())) *
                                          std::numeric_limits<double>::epsilon();
    int rank = 0;
    while (rank < sv.size() && sv[rank] > tol * sv[0]) ++rank;
    rep.jacobian_rank = rank;
    rep.jacobian_condition = rank > 0 ? sv[0] / sv[rank - 1] : 0.0;
  }
  rep.tail = quadratic_tail_fit(rep);
  return rep;
}

SolveReport solve(const GoopProblem& p, const Eigen::VectorXd& z0, const SolverOptions& opts) {
  opts.check();
  KktSystem sys = assemble_perturbed(p, opts.rho0);
  return solve_system(sys, initialize(sys, z0, opts), opts);
}

SolveReport solve_complete(const GoopProblem& p, const Eigen::VectorXd& z0,
                           const SolverOptions& opts, long long cap) {
  opts.check();
  KktSystem sys = assemble_perturbed_complete(p, opts.rho0, cap);
  return solve_system(sys, initialize(sys, z0, opts), opts);
}

// ---------------------------------------------------------------- diagnostics

TailFit quadratic_tail_fit(const std::vector<double>& residuals, double threshold,
                           double noise_floor, int window) {
  TailFit fit;
  // Residuals at the rounding floor carry no rate information.
  std::vector<double> r;
  for (double v : residuals) {
    if (v <= threshold && v > noise_floor) r.push_back(v);
  }
  if (window > 0 && r.size() > static_cast<std::size_t>(window)) {
    r.erase(r.begin(), r.end() - window);
  }
  fit.points = static_cast<int>(r.size());
  if (r.size() < 3) return fit;

  const std::size_t m = r.size() - 1;
  std::vector<double> x(m), yv(m);
  for (std::size_t t = 0; t < m; ++t) {
    x[t] = std::log10(r[t]);
    yv[t] = std::log10(r[t + 1]);
  }
  double log_c = 0.0, log_a = 0.0;
  for (std::size_t t = 0; t < m; ++t) {
    log_c += yv[t] - 2 * x[t];
    log_a += yv[t] - x[t];
  }
  log_c /= static_cast<double>(m);
  log_a /= static_cast<double>(m);
  double quad_err = 0.0, quad_sq = 0.0, lin_sq = 0.0;
  for (std::size_t t = 0; t < m; ++t) {
    double eq = yv[t] - (log_c + 2 * x[t]);
    double el = yv[t] - (log_a + x[t]);
    quad_err = std::max(quad_err, std::abs(eq));
    quad_sq += eq * eq;
    lin_sq += el * el;
  }
  fit.c = std::pow(10.0, log_c);
  fit.max_error_decades = quad_err;
  fit.verdict = (quad_err <= 0.5 && quad_sq <= lin_sq) ? TailVerdict::kQuadratic
                                                        : TailVerdict::kNotQuadratic;
  return fit;
}

TailFit quadratic_tail_fit(const SolveReport& report, double threshold) {
  if (report.trace.empty()) return {};
  const double rho = report.trace.front().rho;
  std::size_t end = 0;
  while (end < report.trace.size() && report.trace[end].rho == rho) ++end;
  // Longest suffix reached by full Newton steps, plus the iterate it started from.
  std::size_t start = end - 1;
  while (start > 0 && report.trace[start].alpha == 1.0) --start;
  std::vector<double> r;
  for (std::size_t j = start; j < end; ++j) r.push_back(report.trace[j].residual);
  return quadratic_tail_fit(r, threshold);
}

CentralPathStudy central_path_study(const GoopProblem& p, const Eigen::VectorXd& z0,
                                    std::vector<double> rhos, const SolverOptions& opts) {
  opts.check();
  if (rhos.empty()) return {};
  for (double r : rhos) {
    if (!(r > 0)) throw std::invalid_argument("central_path_study: rho values must be positive");
  }
  std::sort(rhos.begin(), rhos.end(), std::greater<>());
  KktSystem sys = assemble_perturbed(p, rhos.front());
  // Follow the usual schedule down to the first target, then walk the list.
  int steps = 0;
  for (double r = opts.rho0; r > rhos.front() * (1 + 1e-9); r *= opts.sigma) ++steps;
  Eigen::VectorXd y = initialize(sys.with_rho(steps > 0 ? opts.rho0 : rhos.front()), z0, opts);
  if (steps > 0) {
    SolverOptions approach = opts;
    approach.outer_steps = steps;
    y = solve_system(sys, y, approach).y;
  }
  SolverOptions one = opts;
  one.outer_steps = 1;

  CentralPathStudy study;
  for (double rho : rhos) {
    one.rho0 = rho;
    SolveReport rep = solve_system(sys, y, one);
    y = rep.y;
    study.samples.push_back({rho, rep.status == SolveStatus::kConverged, rep.y, 0.0});
  }
  const CentralPathSample* ref = nullptr;
  if (study.samples.back().converged) ref = &study.samples.back();
  std::vector<double> lx, ly;
  for (auto& s : study.samples) {
    if (!ref || !s.converged) {
      s.distance = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    s.distance = (s.y - ref->y).norm();
    if (&s != ref && s.distance > 10 * opts.eps) {
      lx.push_back(std::log10(s.rho));
      ly.push_back(std::log10(s.distance));
    }
  }
  study.fitted_points = static_cast<int>(lx.size());
  if (lx.size() >= 2) {
    double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / static_cast<double>(lx.size());
    double my = std::accumulate(ly.begin(), ly.end(), 0.0) / static_cast<double>(ly.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t j = 0; j < lx.size(); ++j) {
      sxy += (lx[j] - mx) * (ly[j] - my);
      sxx += (lx[j] - mx) * (lx[j] - mx);
    }
    study.slope = sxy / sxx;
  }
  return study;
}

// ---------------------------------------------------------------- output

void write_trace_csv(const SolveReport& report, std::ostream& out) {
  out << "rho,inner_iter,residual,alpha,min_s_gamma\n";
  char buf[160];
  for (const auto& r : report.trace) {
    std::snprintf(buf, sizeof buf, "%.17g,%d,%.17g,%.17g,%.17g\n", r.rho, r.inner_iter,
                  r.residual, r.alpha, r.min_s_gamma);
    out << buf;
  }
}

json to_json(const SolveReport& report, bool include_trace) {
  json blocks = json::array();
  for (const auto& b : report.blocks) {
    blocks.push_back({{"rho", b.rho},
                      {"status", to_string(b.status)},
                      {"iterations", b.iterations},
                      {"residual", b.residual}});
  }
  json j = {{"status", to_string(report.status)},
            {"all_blocks_converged", report.all_blocks_converged},
            {"final_rho", report.final_rho},
            {"final_residual", report.final_residual},
            {"min_s_gamma", report.min_s_gamma},
            {"max_violation", report.max_violation},
            {"jacobian_rank", report.jacobian_rank},
            {"jacobian_condition", report.jacobian_condition},
            {"tail_fit",
             {{"verdict", to_string(report.tail.verdict)},
              {"c", report.tail.c},
              {"max_error_decades", report.tail.max_error_decades},
              {"points", report.tail.points}}},
            {"wall_time_s", report.wall_time_s},
            {"blocks", blocks},
            {"candidate", to_json(report.candidate)}};
  if (include_trace) {
    json t = json::array();
    for (const auto& r : report.trace) {
      t.push_back({r.rho, r.inner_iter, r.residual, r.alpha, r.min_s_gamma});
    }
    j["trace"] = t;
  }
  return j;
}

}  // namespace goop
