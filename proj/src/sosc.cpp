#include "goop/sosc.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>

#include <Eigen/Eigenvalues>

#include "goop/linalg.hpp"
#include "sampler.hpp"

namespace goop {

using nlohmann::json;

const char* to_string(LevelVerdict v) {
  switch (v) {
    case LevelVerdict::kCertifiedStrict: return "certified-strict";
    case LevelVerdict::kCertified: return "certified";
    case LevelVerdict::kIndeterminate: return "indeterminate";
    case LevelVerdict::kViolated: return "violated";
    case LevelVerdict::kSkipped: return "skipped";
  }
  return "?";
}

void SoscOptions::check() const {
  if (!(mu >= 0) || samples < 0 || !(epsilon >= 0) || !(delta > 0)) {
    throw std::invalid_argument("SoscOptions: need mu >= 0, samples >= 0, epsilon >= 0, delta > 0");
  }
  if (!(activity_tol >= 0) || !(strict_tol >= 0) || !(stationarity_tol >= 0) ||
      !(residual_tol >= 0) || !(rank_tol > 0)) {
    throw std::invalid_argument("SoscOptions: tolerances must be nonnegative");
  }
}

bool Certificate::certified() const {
  return verdict == LevelVerdict::kCertified || verdict == LevelVerdict::kCertifiedStrict;
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Player i's level-k subproblem over the reduced layout.
struct LevelModel {
  int player = 0, level = 0, levels = 0;
  std::vector<int> slots;  // z^i, then η_{k+1..K}
  int n_own = 0;
  int n_eq = 0, n_ineq = 0;
  std::vector<int> mult_slot;  // per inequality row; -1 for γ ≥ 0 rows
  ExpressionTape grad, hess, eq, eq_jac, ineq, ineq_jac;

  int dim() const { return static_cast<int>(slots.size()); }
};

struct Context {
  KktSystem sys;
  Eigen::VectorXd y;
};

Context make_context(const GoopProblem& p, const Candidate& c) {
  Context ctx{assemble_reduced(p), {}};
  ctx.y = ctx.sys.pack(c);
  return ctx;
}

void require_level(const GoopProblem& p, int i, int k) {
  if (i < 0 || i >= p.player_count()) throw std::invalid_argument("player index out of range");
  if (k < 1 || k > p.players[i].levels()) throw std::invalid_argument("level out of range");
}

void append_segment(const KktSystem& sys, int i, int k, Role role, std::vector<int>& out) {
  const Segment* s = sys.layout().find(i, k, role);
  if (!s) return;
  for (int j = 0; j < s->length; ++j) out.push_back(s->offset + j);
}

LevelModel build_level(const KktSystem& sys, const GoopProblem& p, int i, int k) {
  require_level(p, i, k);
  const int K = p.players[i].levels();
  const int mi = p.players[i].m_ineq();
  LevelModel m;
  m.player = i;
  m.level = k;
  m.levels = K;
  append_segment(sys, i, 0, Role::kZ, m.slots);
  m.n_own = static_cast<int>(m.slots.size());
  for (int j = k + 1; j <= K; ++j) {
    for (Role r : {Role::kPsi, Role::kPhi, Role::kLambda, Role::kGamma}) {
      append_segment(sys, i, j, r, m.slots);
    }
  }
  std::vector<VarKey> keys;
  for (int s : m.slots) keys.push_back(sys.space().ref_at(s).key());

  Differentiator d;
  const Expression& L = sys.lagrangians()[i][k - 1];
  std::vector<Expression> grad, hess;
  for (VarKey a : keys) grad.push_back(d(L, a));
  for (int a = 0; a < m.dim(); ++a)
    for (int b = a; b < m.dim(); ++b) hess.push_back(d(grad[a], keys[b]));

  std::vector<Expression> eq, ineq;
  const auto& tags = sys.row_tags();
  for (std::size_t r = 0; r < tags.size(); ++r) {
    const RowTag& t = tags[r];
    if (t.player != i) continue;
    const bool lower = t.level > k;
    if ((t.kind == RowKind::kStationarity && lower) || t.kind == RowKind::kEquality ||
        (t.kind == RowKind::kComplementarity && lower)) {
      eq.push_back(sys.f_expressions()[r]);
    }
  }
  int g_off = 0;
  for (int j = 0; j < i; ++j) g_off += (1 + p.players[j].levels()) * p.players[j].m_ineq();
  const auto& gexpr = sys.g_expressions();
  const Segment* gam_k = sys.layout().find(i, k, Role::kGamma);
  for (int r = 0; r < mi; ++r) {
    ineq.push_back(gexpr[g_off + r]);
    m.mult_slot.push_back(gam_k->offset + r);
  }
  for (int j = k + 1; j <= K; ++j) {
    for (int r = 0; r < mi; ++r) {
      ineq.push_back(gexpr[g_off + j * mi + r]);
      m.mult_slot.push_back(-1);
    }
  }
  m.n_eq = static_cast<int>(eq.size());
  m.n_ineq = static_cast<int>(ineq.size());

  auto jac = [&](const std::vector<Expression>& rows) {
    std::vector<Expression> out;
    for (const auto& e : rows)
      for (VarKey a : keys) out.push_back(d(e, a));
    return out;
  };
  const VariableSpace& space = sys.space();
  m.grad = ExpressionTape(grad, space);
  m.hess = ExpressionTape(hess, space);
  m.eq = ExpressionTape(eq, space);
  m.eq_jac = ExpressionTape(jac(eq), space);
  m.ineq = ExpressionTape(ineq, space);
  m.ineq_jac = ExpressionTape(jac(ineq), space);
  return m;
}

Eigen::MatrixXd reshape_rows(const Eigen::VectorXd& flat, int rows, int cols) {
  Eigen::MatrixXd out(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out(r, c) = flat[r * cols + c];
  return out;
}

Eigen::MatrixXd hessian_at(const LevelModel& m, const Eigen::VectorXd& y) {
  Eigen::VectorXd flat = m.hess.evaluate(y);
  Eigen::MatrixXd H(m.dim(), m.dim());
  int idx = 0;
  for (int a = 0; a < m.dim(); ++a)
    for (int b = a; b < m.dim(); ++b) H(a, b) = H(b, a) = flat[idx++];
  return H;
}

Eigen::VectorXd scatter(const LevelModel& m, const Eigen::VectorXd& y, const Eigen::VectorXd& p,
                        double step) {
  Eigen::VectorXd out = y;
  for (int a = 0; a < m.dim(); ++a) out[m.slots[a]] += step * p[a];
  return out;
}

double curvature_at(const LevelModel& m, const Eigen::VectorXd& y, const Eigen::VectorXd& p,
                    double alpha, double delta) {
  return p.dot(hessian_at(m, scatter(m, y, p, alpha * delta)) * p);
}

LevelActiveSet active_set(const LevelModel& m, const Eigen::VectorXd& y, double act_tol,
                          double strict_tol) {
  LevelActiveSet a;
  a.player = m.player;
  a.level = m.level;
  Eigen::VectorXd G = m.ineq.evaluate(y);
  for (int r = 0; r < m.n_ineq; ++r) {
    if (std::abs(G[r]) > act_tol) continue;
    a.active.push_back(r);
    if (m.mult_slot[r] >= 0 && y[m.mult_slot[r]] > strict_tol) a.strict.push_back(r);
  }
  return a;
}

double dual_stationarity(const LevelModel& m, const Eigen::VectorXd& y) {
  if (m.dim() == m.n_own) return 0.0;
  return m.grad.evaluate(y).tail(m.dim() - m.n_own).lpNorm<Eigen::Infinity>();
}

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& a, const std::vector<int>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = a.row(rows[r]);
  return out;
}

Eigen::MatrixXd vstack(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() + b.rows(), a.cols());
  out << a, b;
  return out;
}

ConeBasis cone_of(const LevelModel& m, const Eigen::VectorXd& y, const SoscOptions& opts) {
  const LevelActiveSet act = active_set(m, y, opts.activity_tol, opts.strict_tol);
  ConeBasis cone;
  cone.slots = m.slots;
  cone.equality_rows = reshape_rows(m.eq_jac.evaluate(y), m.n_eq, m.dim());
  const Eigen::MatrixXd ineq = reshape_rows(m.ineq_jac.evaluate(y), m.n_ineq, m.dim());
  std::vector<int> weak;
  std::set_difference(act.active.begin(), act.active.end(), act.strict.begin(), act.strict.end(),
                      std::back_inserter(weak));
  cone.strict_rows = select_rows(ineq, act.strict);
  cone.weak_rows = select_rows(ineq, weak);
  const Eigen::MatrixXd tight = vstack(cone.equality_rows, cone.strict_rows);
  cone.span = null_space_basis(tight, opts.rank_tol);
  cone.lineality = null_space_basis(vstack(tight, cone.weak_rows), opts.rank_tol);
  return cone;
}

// Smallest α on a halving grid whose perturbed curvature confirms the violation.
std::optional<Witness> confirm(const LevelModel& m, const Eigen::VectorXd& y,
                               const Eigen::VectorXd& p, const SoscOptions& opts) {
  for (double alpha = 0.5; alpha > 1e-6; alpha *= 0.5) {
    const double c = curvature_at(m, y, p, alpha, opts.delta);
    if (c < -opts.mu) return Witness{p, alpha, opts.delta, c};
  }
  return std::nullopt;
}

LevelReport run_level(const LevelModel& m, const Eigen::VectorXd& y, const SoscOptions& opts) {
  LevelReport rep;
  rep.player = m.player;
  rep.level = m.level;
  rep.min_eigenvalue = kNaN;
  rep.min_curvature = kNaN;
  rep.dual_stationarity = dual_stationarity(m, y);
  if (rep.dual_stationarity > opts.stationarity_tol) {
    rep.verdict = LevelVerdict::kIndeterminate;
    rep.note = "multiplier stationarity not satisfied";
    return rep;
  }

  ConeBasis cone;
  try {
    cone = cone_of(m, y, opts);
  } catch (const NumericError& e) {
    rep.verdict = LevelVerdict::kIndeterminate;
    rep.note = std::string("degenerate cone basis: ") + e.what();
    return rep;
  }
  rep.lineality_dim = static_cast<int>(cone.lineality.cols());
  const bool is_subspace = cone.weak_rows.rows() == 0;
  if (cone.span.cols() == 0) {
    rep.verdict = LevelVerdict::kCertifiedStrict;
    rep.note = "critical cone is {0}";
    return rep;
  }

  const Eigen::MatrixXd H = hessian_at(m, y);
  if (cone.lineality.cols() > 0) {
    const Eigen::MatrixXd P = cone.lineality.transpose() * H * cone.lineality;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (P + P.transpose()));
    rep.min_eigenvalue = eig.eigenvalues()[0];
    if (rep.min_eigenvalue >= opts.mu && is_subspace) {
      rep.verdict = LevelVerdict::kCertifiedStrict;
      return rep;
    }
    if (rep.min_eigenvalue < -opts.mu) {
      Eigen::VectorXd p = cone.lineality * eig.eigenvectors().col(0);
      p.normalize();
      if (auto w = confirm(m, y, p, opts)) {
        rep.witness = w;
        rep.verdict = LevelVerdict::kViolated;
        return rep;
      }
    }
  }

  // Sampling over the cone. Directions that break a weakly active row are
  // flipped, then redrawn.
  detail::Sampler rng(opts.seed ^ (static_cast<std::uint64_t>(m.player) << 32) ^
                      static_cast<std::uint64_t>(m.level));
  double worst = std::numeric_limits<double>::infinity();
  int drawn = 0;
  for (int s = 0; s < opts.samples; ++s) {
    Eigen::VectorXd d;
    for (int attempt = 0; attempt < 100; ++attempt) {
      Eigen::VectorXd u = cone.span * rng.normal_vector(static_cast<int>(cone.span.cols()));
      if (is_subspace || (cone.weak_rows * u).minCoeff() >= 0) { d = u; break; }
      if ((cone.weak_rows * u).maxCoeff() <= 0) { d = -u; break; }
    }
    if (d.size() == 0 || d.norm() == 0) continue;
    d.normalize();
    if (opts.epsilon > 0) {
      Eigen::VectorXd e = rng.normal_vector(m.dim());
      d += opts.epsilon * rng.uniform() * e / e.norm();
      d.normalize();
    }
    const double alpha = rng.uniform();
    const double c = curvature_at(m, y, d, alpha, opts.delta);
    ++drawn;
    worst = std::min(worst, c);
    if (c < -opts.mu) {
      rep.witness = Witness{d, alpha, opts.delta, c};
      rep.verdict = LevelVerdict::kViolated;
      rep.samples = drawn;
      rep.min_curvature = worst;
      return rep;
    }
  }
  rep.samples = drawn;
  if (drawn == 0) {
    rep.verdict = LevelVerdict::kIndeterminate;
    rep.note = "no cone direction could be sampled";
    return rep;
  }
  rep.min_curvature = worst;
  rep.verdict = LevelVerdict::kCertified;
  return rep;
}

int severity(LevelVerdict v) {
  switch (v) {
    case LevelVerdict::kSkipped:
    case LevelVerdict::kCertifiedStrict: return 0;
    case LevelVerdict::kCertified: return 1;
    case LevelVerdict::kIndeterminate: return 2;
    case LevelVerdict::kViolated: return 3;
  }
  return 3;
}

json number_or_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace

std::vector<LevelActiveSet> active_sets(const GoopProblem& p, const Candidate& c, double tol) {
  Context ctx = make_context(p, c);
  std::vector<LevelActiveSet> out;
  for (int i = 0; i < p.player_count(); ++i) {
    for (int k = 1; k <= p.players[i].levels(); ++k) {
      out.push_back(active_set(build_level(ctx.sys, p, i, k), ctx.y, tol, tol));
    }
  }
  return out;
}

double check_dual_stationarity(const GoopProblem& p, const Candidate& c, int player, int level) {
  Context ctx = make_context(p, c);
  return dual_stationarity(build_level(ctx.sys, p, player, level), ctx.y);
}

ConeBasis cone_basis(const GoopProblem& p, const Candidate& c, int player, int level,
                     const SoscOptions& opts) {
  opts.check();
  Context ctx = make_context(p, c);
  return cone_of(build_level(ctx.sys, p, player, level), ctx.y, opts);
}

double level_curvature(const GoopProblem& p, const Candidate& c, int player, int level,
                       const Eigen::VectorXd& direction, double alpha, double delta) {
  Context ctx = make_context(p, c);
  LevelModel m = build_level(ctx.sys, p, player, level);
  if (direction.size() != m.dim()) throw std::invalid_argument("direction has the wrong dimension");
  return curvature_at(m, ctx.y, direction, alpha, delta);
}

double cone_violation(const ConeBasis& cone, const Eigen::VectorXd& d) {
  double v = 0.0;
  if (cone.equality_rows.rows() > 0) v = std::max(v, (cone.equality_rows * d).lpNorm<Eigen::Infinity>());
  if (cone.strict_rows.rows() > 0) v = std::max(v, (cone.strict_rows * d).lpNorm<Eigen::Infinity>());
  if (cone.weak_rows.rows() > 0) v = std::max(v, -(cone.weak_rows * d).minCoeff());
  return v;
}

LevelReport certify_level(const GoopProblem& p, const Candidate& c, int player, int level,
                          const SoscOptions& opts) {
  opts.check();
  Context ctx = make_context(p, c);
  return run_level(build_level(ctx.sys, p, player, level), ctx.y, opts);
}

Certificate certify(const GoopProblem& p, const Candidate& c, const SoscOptions& opts) {
  opts.check();
  Context ctx = make_context(p, c);
  const ResidualSummary res = residual_summary(ctx.sys, ctx.y);
  if (res.f_inf > opts.residual_tol || res.g_min < -opts.residual_tol) {
    throw PreconditionError("candidate does not solve the reduced system: ‖F‖∞ = " +
                            std::to_string(res.f_inf) + ", min G = " + std::to_string(res.g_min));
  }
  Certificate cert;
  int worst = 0;
  bool any_evaluated = false;
  for (int i = 0; i < p.player_count(); ++i) {
    bool skip = false;
    for (int k = p.players[i].levels(); k >= 1; --k) {
      LevelReport rep;
      if (skip) {
        rep.player = i;
        rep.level = k;
        rep.verdict = LevelVerdict::kSkipped;
        rep.min_eigenvalue = rep.min_curvature = kNaN;
        rep.note = "a deeper level is a strict local minimiser";
      } else {
        rep = run_level(build_level(ctx.sys, p, i, k), ctx.y, opts);
        any_evaluated = true;
        skip = rep.verdict == LevelVerdict::kCertifiedStrict;
      }
      worst = std::max(worst, severity(rep.verdict));
      cert.levels.push_back(std::move(rep));
    }
  }
  static constexpr LevelVerdict kByRank[] = {LevelVerdict::kCertifiedStrict, LevelVerdict::kCertified,
                                             LevelVerdict::kIndeterminate, LevelVerdict::kViolated};
  cert.verdict = any_evaluated ? kByRank[worst] : LevelVerdict::kCertifiedStrict;
  return cert;
}

json to_json(const Certificate& cert) {
  json levels = json::array();
  for (const auto& r : cert.levels) {
    json j = {{"player", r.player + 1},
              {"level", r.level},
              {"verdict", to_string(r.verdict)},
              {"dual_stationarity", r.dual_stationarity},
              {"min_eigenvalue", number_or_null(r.min_eigenvalue)},
              {"min_sampled_curvature", number_or_null(r.min_curvature)},
              {"samples", r.samples},
              {"lineality_dim", r.lineality_dim}};
    if (!r.note.empty()) j["note"] = r.note;
    if (r.witness) {
      j["witness"] = {{"direction", vector_json(r.witness->direction)},
                      {"alpha", r.witness->alpha},
                      {"delta", r.witness->delta},
                      {"curvature", r.witness->curvature}};
    }
    levels.push_back(std::move(j));
  }
  return {{"verdict", to_string(cert.verdict)}, {"certified", cert.certified()}, {"levels", levels}};
}

}  // namespace goop
