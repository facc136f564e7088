#include "goop/quadratic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include <Eigen/SVD>

#include "goop/linalg.hpp"

namespace goop {

namespace {

using Label = RecursionLabel;

bool live_row(const Label& l) {
  return l.kind == Label::kStationarity || l.kind == Label::kEquality;
}

bool live_col(const Label& l) {
  if (l.kind == Label::kZ) return true;
  return l.target_kind == Label::kStationarity || l.target_kind == Label::kEquality;
}

// Q_k: row block of player i taken from player i's Q_k^i. Q̂_k keeps only
// the diagonal blocks.
void stack_level(const QuadraticGoop& p, int k, Eigen::MatrixXd& Qk, Eigen::MatrixXd& Qhat,
                 Eigen::VectorXd& qk) {
  const int n = p.dimension();
  Qk.setZero(n, n);
  Qhat.setZero(n, n);
  qk.setZero(n);
  for (int i = 0; i < p.player_count(); ++i) {
    const auto& pl = p.players[i];
    const int off = p.offset(i);
    Qk.middleRows(off, pl.n) = pl.Q[k - 1].middleRows(off, pl.n);
    Qhat.block(off, off, pl.n, pl.n) = pl.Q[k - 1].block(off, off, pl.n, pl.n);
    qk.segment(off, pl.n) = pl.q[k - 1].segment(off, pl.n);
  }
}

struct Ownership {
  std::vector<int> z_player, z_local, eq_player, eq_local;
};

Ownership ownership(const QuadraticGoop& p) {
  Ownership o;
  for (int i = 0; i < p.player_count(); ++i) {
    for (int r = 0; r < p.players[i].n; ++r) {
      o.z_player.push_back(i);
      o.z_local.push_back(r);
    }
  }
  for (int i = 0; i < p.player_count(); ++i) {
    for (int r = 0; r < p.players[i].m_eq(); ++r) {
      o.eq_player.push_back(i);
      o.eq_local.push_back(r);
    }
  }
  return o;
}

Eigen::MatrixXd select(const Eigen::MatrixXd& m, const std::vector<int>& rows,
                       const std::vector<int>& cols) {
  Eigen::MatrixXd out(rows.size(), cols.size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c) out(r, c) = m(rows[r], cols[c]);
  return out;
}

double relative_residual(const Eigen::MatrixXd& a, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& b) {
  return (a * x - b).norm() / (1.0 + b.norm());
}

}  // namespace

std::vector<int> QuadraticRecursion::live_rows(int k) const {
  std::vector<int> out;
  const auto& labels = row_labels.at(k - 1);
  for (int r = 0; r < static_cast<int>(labels.size()); ++r)
    if (live_row(labels[r])) out.push_back(r);
  return out;
}

std::vector<int> QuadraticRecursion::live_cols(int k) const {
  std::vector<int> out;
  const auto& labels = col_labels.at(k - 1);
  for (int c = 0; c < static_cast<int>(labels.size()); ++c)
    if (live_col(labels[c])) out.push_back(c);
  return out;
}

Eigen::MatrixXd QuadraticRecursion::compact_M(int k) const {
  return select(M.at(k - 1), live_rows(k), live_cols(k));
}

Eigen::VectorXd QuadraticRecursion::compact_p(int k) const {
  const auto rows = live_rows(k);
  Eigen::VectorXd out(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) out[r] = p.at(k - 1)[rows[r]];
  return out;
}

QuadraticRecursion build_recursion(const QuadraticGoop& input) {
  if (input.has_inequalities()) {
    throw PreconditionError("the linear recursion needs an equality-only problem; reduce the active set first");
  }
  validate(input);
  const int K = input.max_levels();
  const QuadraticGoop prob = pad_levels(input, K);

  QuadraticRecursion rec;
  rec.K = K;
  rec.n = prob.dimension();
  const int n = rec.n;
  Eigen::MatrixXd H(0, n);
  Eigen::VectorXd h(0);
  for (const auto& pl : prob.players) {
    H.conservativeResize(H.rows() + pl.m_eq(), Eigen::NoChange);
    H.bottomRows(pl.m_eq()) = pl.H;
    h.conservativeResize(h.size() + pl.m_eq());
    h.tail(pl.m_eq()) = pl.h;
  }
  rec.m_eq = static_cast<int>(H.rows());
  const int m = rec.m_eq;
  const Eigen::MatrixXd Hhat = stacked_own_block(prob, false);

  rec.R_bar.resize(K);
  rec.R.resize(K);
  rec.M_bar.resize(K);
  rec.M.resize(K);
  rec.p.resize(K);
  rec.row_labels.resize(K);
  rec.col_labels.resize(K);

  Eigen::MatrixXd Qk, Qhat;
  Eigen::VectorXd qk;

  // Innermost level.
  {
    stack_level(prob, K, Qk, Qhat, qk);
    const int d = n + m;
    Eigen::MatrixXd Rb = Eigen::MatrixXd::Zero(d, d);
    Rb.topLeftCorner(n, n) = Qhat;
    Rb.topRightCorner(n, m) = Hhat.transpose();
    Rb.bottomLeftCorner(m, n) = Hhat;
    Eigen::MatrixXd MK = Eigen::MatrixXd::Zero(d, d);
    MK.topLeftCorner(n, n) = Qk;
    MK.topRightCorner(n, m) = Hhat.transpose();
    MK.bottomLeftCorner(m, n) = H;
    Eigen::VectorXd pK(d);
    pK << -qk, h;

    Eigen::MatrixXd RK = Eigen::MatrixXd::Zero(d, d);
    RK.topRows(n) = Rb.topRows(n);

    rec.R_bar[K - 1] = Rb;
    rec.R[K - 1] = RK;
    rec.M_bar[K - 1] = MK;
    rec.M[K - 1] = MK;
    rec.p[K - 1] = pK;

    auto& rows = rec.row_labels[K - 1];
    auto& cols = rec.col_labels[K - 1];
    for (int r = 0; r < n; ++r) rows.push_back({Label::kStationarity, K, r});
    for (int r = 0; r < m; ++r) rows.push_back({Label::kEquality, K, r});
    for (int r = 0; r < n; ++r) cols.push_back({Label::kZ, 0, r});
    for (int r = 0; r < m; ++r) cols.push_back({Label::kDual, K, r, Label::kEquality, K, r});
  }

  for (int k = K - 1; k >= 1; --k) {
    stack_level(prob, k, Qk, Qhat, qk);
    const Eigen::MatrixXd& Rb1 = rec.R_bar[k];
    const Eigen::MatrixXd& R1 = rec.R[k];
    const int d = static_cast<int>(Rb1.rows());

    Eigen::MatrixXd Rb = Eigen::MatrixXd::Zero(2 * d, 2 * d);
    Rb.topLeftCorner(n, n) = Qhat;
    Rb.topRightCorner(d, d) = Rb1;
    Rb.bottomLeftCorner(d, d) = Rb1;

    Eigen::MatrixXd Mb = Eigen::MatrixXd::Zero(2 * d, 2 * d);
    Mb.topLeftCorner(n, n) = Qk;
    Mb.topRightCorner(d, d) = Rb1;
    Mb.bottomLeftCorner(d, d) = rec.M_bar[k];

    Eigen::MatrixXd Mk = Eigen::MatrixXd::Zero(2 * d, 2 * d);
    Mk.topLeftCorner(n, n) = Qk;
    Mk.topRightCorner(d, d) = R1;
    Mk.bottomLeftCorner(d, d) = rec.M[k];

    Eigen::VectorXd pk = Eigen::VectorXd::Zero(2 * d);
    pk.head(n) = -qk;
    pk.tail(d) = rec.p[k];

    Eigen::MatrixXd Rk = Eigen::MatrixXd::Zero(2 * d, 2 * d);
    Rk.topRows(n) = Rb.topRows(n);

    rec.R_bar[k - 1] = std::move(Rb);
    rec.R[k - 1] = std::move(Rk);
    rec.M_bar[k - 1] = std::move(Mb);
    rec.M[k - 1] = std::move(Mk);
    rec.p[k - 1] = std::move(pk);

    auto& rows = rec.row_labels[k - 1];
    for (int r = 0; r < n; ++r) rows.push_back({Label::kStationarity, k, r});
    for (int r = n; r < d; ++r) rows.push_back({Label::kInducedStationarity, k, r - n});
    for (const auto& l : rec.row_labels[k]) rows.push_back(l);

    auto& cols = rec.col_labels[k - 1];
    cols = rec.col_labels[k];
    for (int j = 0; j < d; ++j) {
      const Label& t = rec.row_labels[k][j];
      cols.push_back({Label::kDual, k, j, t.kind, t.level, t.index});
    }
  }
  return rec;
}

LinearSolution solve_linear(const QuadraticRecursion& rec, SystemKind kind, double tol) {
  Eigen::MatrixXd a;
  Eigen::VectorXd b;
  switch (kind) {
    case SystemKind::kReduced:
      a = rec.compact_M(1);
      b = rec.compact_p(1);
      break;
    case SystemKind::kComplete:
      a = rec.M_bar[0];
      b = rec.p[0];
      break;
    default:
      throw std::invalid_argument("solve_linear handles the reduced and complete kinds only");
  }
  LinearSolution out;
  out.v = pinv_solve(a, b);
  out.residual = relative_residual(a, out.v, b);
  if (!(out.residual <= tol)) {
    throw NoKktPointError("no KKT point: right-hand side is outside the column space (relative residual " +
                              std::to_string(out.residual) + ")",
                          out.residual);
  }
  out.z = out.v.head(rec.n);
  const Eigen::MatrixXd null = null_space_basis(a);
  if (null.cols() > 0) {
    // The basis is orthonormal, so an absolute cutoff separates real primal
    // directions from rounding noise.
    const Eigen::VectorXd sv = Eigen::BDCSVD<Eigen::MatrixXd>(null.topRows(rec.n)).singularValues();
    out.primal_null_dim = static_cast<int>((sv.array() > 1e-8).count());
  }
  return out;
}

double primal_membership_residual(const QuadraticRecursion& rec, SystemKind kind,
                                  const Eigen::VectorXd& z) {
  Eigen::MatrixXd a;
  Eigen::VectorXd b;
  if (kind == SystemKind::kReduced) {
    a = rec.compact_M(1);
    b = rec.compact_p(1);
  } else {
    a = rec.M_bar[0];
    b = rec.p[0];
  }
  const Eigen::VectorXd rhs = b - a.leftCols(rec.n) * z;
  const Eigen::MatrixXd rest = a.rightCols(a.cols() - rec.n);
  if (rest.cols() == 0) return rhs.norm() / (1.0 + b.norm());
  const Eigen::VectorXd x = pinv_solve(rest, rhs);
  return relative_residual(rest, x, rhs) * (1.0 + rhs.norm()) / (1.0 + b.norm());
}

bool InclusionReport::holds() const {
  for (const auto& l : levels)
    if (!(l.r_residual <= tol && l.m_residual <= tol)) return false;
  return true;
}

InclusionReport verify_col_inclusions(const QuadraticRecursion& rec, double tol) {
  // The recursion matrices are exact copies of problem data, so the test is
  // run in extended precision; near-singular R̄_k would otherwise turn
  // rounding into residuals well above tol.
  using XMat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  InclusionReport out;
  out.tol = tol;
  for (int k = 1; k <= rec.K; ++k) {
    InclusionLevel l{k, 0.0, 0.0};
    const XMat Rb = rec.R_bar[k - 1].cast<long double>(), R = rec.R[k - 1].cast<long double>();
    l.r_residual = static_cast<double>(col_space_residual(Rb, R));
    if (k < rec.K) {
      const XMat Mb = rec.M_bar[k - 1].cast<long double>(), M = rec.M[k - 1].cast<long double>();
      l.m_residual = static_cast<double>(
          col_space_residual(Mb.rightCols(Mb.cols() - rec.n), M.rightCols(M.cols() - rec.n)));
    }
    out.levels.push_back(l);
  }
  return out;
}

ActiveSetReduction active_set_reduce(const QuadraticGoop& p, const Eigen::VectorXd& z_star,
                                     double act_tol) {
  if (z_star.size() != p.dimension()) throw std::invalid_argument("z has the wrong dimension");
  ActiveSetReduction out;
  out.equality_problem = p;
  for (int i = 0; i < p.player_count(); ++i) {
    const auto& pl = p.players[i];
    auto& eq = out.equality_problem.players[i];
    std::vector<int> active;
    const Eigen::VectorXd slack = pl.G * z_star - pl.g;
    for (int r = 0; r < pl.m_ineq(); ++r) {
      if (std::abs(slack[r]) <= act_tol) {
        active.push_back(r);
      } else if (slack[r] < 0) {
        out.warnings.push_back("player " + std::to_string(i + 1) + " inequality " + std::to_string(r + 1) +
                               " is violated at z*");
      }
    }
    const int m = pl.m_eq();
    const int a = static_cast<int>(active.size());
    eq.H.resize(m + a, pl.H.cols());
    eq.h.resize(m + a);
    eq.H.topRows(m) = pl.H;
    eq.h.head(m) = pl.h;
    for (int j = 0; j < a; ++j) {
      eq.H.row(m + j) = pl.G.row(active[j]);
      eq.h[m + j] = pl.g[active[j]];
    }
    eq.G.resize(0, pl.G.cols());
    eq.g.resize(0);
    out.active.push_back(std::move(active));
  }
  const Eigen::MatrixXd h_hat = stacked_own_block(out.equality_problem, false);
  if (h_hat.rows() > 0 && numerical_rank(h_hat) < h_hat.rows()) {
    out.regular = false;
    out.warnings.push_back("active constraints make the stacked own-block matrix rank deficient");
  }
  return out;
}

namespace {

Candidate empty_candidate(const QuadraticGoop& p, int K) {
  Candidate c;
  c.z = Eigen::VectorXd::Zero(p.dimension());
  for (const auto& pl : p.players) {
    std::vector<LevelDuals> levels(K);
    for (int k = 1; k <= K; ++k) {
      auto& d = levels[k - 1];
      d.psi = Eigen::VectorXd::Zero((K - k) * pl.n);
      d.phi = Eigen::VectorXd::Zero((K - k) * pl.m_ineq());
      d.lambda = Eigen::VectorXd::Zero(pl.m_eq());
      d.gamma = Eigen::VectorXd::Zero(pl.m_ineq());
    }
    c.players.push_back(std::move(levels));
  }
  return c;
}

// Slot of one compact unknown in a reduced candidate.
double& candidate_slot(Candidate& c, const QuadraticGoop& p, const Ownership& own,
                       const RecursionLabel& l) {
  if (l.kind == RecursionLabel::kZ) return c.z[l.index];
  if (l.target_kind == RecursionLabel::kEquality) {
    return c.players[own.eq_player[l.target_index]][l.level - 1].lambda[own.eq_local[l.target_index]];
  }
  const int i = own.z_player[l.target_index];
  const int pos = (l.target_level - l.level - 1) * p.players[i].n + own.z_local[l.target_index];
  return c.players[i][l.level - 1].psi[pos];
}

void check_shape(const QuadraticGoop& p, const QuadraticRecursion& rec) {
  if (p.has_inequalities()) throw PreconditionError("expected an equality-only problem");
  if (p.dimension() != rec.n) throw std::invalid_argument("problem and recursion dimensions differ");
  int m = 0;
  for (const auto& pl : p.players) m += pl.m_eq();
  if (m != rec.m_eq) throw std::invalid_argument("problem and recursion equality counts differ");
}

}  // namespace

Candidate reduced_candidate(const QuadraticGoop& p, const QuadraticRecursion& rec,
                            const Eigen::VectorXd& v) {
  check_shape(p, rec);
  const auto cols = rec.live_cols(1);
  if (v.size() != static_cast<Eigen::Index>(cols.size())) {
    throw std::invalid_argument("compact unknown vector has the wrong length");
  }
  const Ownership own = ownership(p);
  Candidate c = empty_candidate(p, rec.K);
  for (std::size_t j = 0; j < cols.size(); ++j) {
    const auto& l = rec.col_labels[0][cols[j]];
    // Dual blocks of the linear form carry the opposite sign.
    candidate_slot(c, p, own, l) = l.kind == RecursionLabel::kZ ? v[j] : -v[j];
  }
  return c;
}

Eigen::VectorXd compact_unknowns(const QuadraticGoop& p, const QuadraticRecursion& rec,
                                 const Candidate& c) {
  check_shape(p, rec);
  const auto cols = rec.live_cols(1);
  const Ownership own = ownership(p);
  Candidate copy = c;
  Eigen::VectorXd v(cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j) {
    const auto& l = rec.col_labels[0][cols[j]];
    const double x = candidate_slot(copy, p, own, l);
    v[j] = l.kind == RecursionLabel::kZ ? x : -x;
  }
  return v;
}

Candidate reconstruct_inequality_multipliers(const QuadraticGoop& inequality_problem,
                                             const ActiveSetReduction& reduction,
                                             const Candidate& eq, double strict_tol) {
  if (eq.players.size() != inequality_problem.players.size()) {
    throw std::invalid_argument("candidate and problem player counts differ");
  }
  const int K = static_cast<int>(eq.players.front().size());
  const QuadraticGoop prob = pad_levels(inequality_problem, K);
  Candidate out = empty_candidate(prob, K);
  out.z = eq.z;
  for (int i = 0; i < prob.player_count(); ++i) {
    const auto& pl = prob.players[i];
    const auto& active = reduction.active.at(i);
    const int m = pl.m_eq();
    auto& dst = out.players[i];
    const auto& src = eq.players[i];
    for (int k = 1; k <= K; ++k) {
      dst[k - 1].psi = src[k - 1].psi;
      dst[k - 1].lambda = src[k - 1].lambda.head(m);
    }
    for (std::size_t a = 0; a < active.size(); ++a) {
      const int r = active[a];
      const double top = src[K - 1].lambda[m + a];
      if (!(top > strict_tol)) {
        throw DegenerateError("player " + std::to_string(i + 1) + " active inequality " +
                              std::to_string(r + 1) + " has innermost multiplier " +
                              std::to_string(top) + ", not strictly positive");
      }
      dst[K - 1].gamma[r] = top;
      for (int k = 1; k < K; ++k) {
        const double lam = src[k - 1].lambda[m + a];
        if (lam >= 0) {
          dst[k - 1].gamma[r] = lam;
        } else {
          // φ_{k,1} pairs with the innermost γ, which is strictly positive.
          dst[k - 1].phi[r] = lam / top;
        }
      }
    }
  }
  return out;
}

std::vector<KktPoint> enumerate_kkt_points(const QuadraticGoop& input, double tol,
                                           double strict_tol) {
  const QuadraticGoop p = pad_levels(input, input.max_levels());
  int total = 0;
  for (const auto& pl : p.players) total += pl.m_ineq();
  if (total > 20) throw std::invalid_argument("too many inequality rows to enumerate active sets");
  const KktSystem sys = assemble_reduced(lift_quadratic(p));

  std::vector<KktPoint> out;
  for (long mask = 0; mask < (1L << total); ++mask) {
    ActiveSetReduction red;
    red.equality_problem = p;
    int bit = 0;
    for (int i = 0; i < p.player_count(); ++i) {
      const auto& pl = p.players[i];
      auto& eq = red.equality_problem.players[i];
      std::vector<int> act;
      for (int r = 0; r < pl.m_ineq(); ++r, ++bit)
        if (mask >> bit & 1) act.push_back(r);
      const int m = pl.m_eq();
      eq.H.resize(m + act.size(), pl.H.cols());
      eq.h.resize(m + act.size());
      eq.H.topRows(m) = pl.H;
      eq.h.head(m) = pl.h;
      for (std::size_t a = 0; a < act.size(); ++a) {
        eq.H.row(m + a) = pl.G.row(act[a]);
        eq.h[m + a] = pl.g[act[a]];
      }
      eq.G.resize(0, pl.G.cols());
      eq.g.resize(0);
      red.active.push_back(std::move(act));
    }
    KktPoint pt;
    try {
      const QuadraticRecursion rec = build_recursion(red.equality_problem);
      const LinearSolution sol = solve_linear(rec, SystemKind::kReduced, tol);
      const Candidate eq = reduced_candidate(red.equality_problem, rec, sol.v);
      pt.candidate = reconstruct_inequality_multipliers(p, red, eq, 0.0);
    } catch (const NoKktPointError&) {
      continue;
    } catch (const DegenerateError&) {
      continue;
    }
    const ResidualSummary rs = residual_summary(sys, sys.pack(pt.candidate));
    if (!(rs.f_inf <= tol * 1e2 && rs.g_min >= -tol)) continue;
    pt.residual = rs.f_inf;
    pt.active = red.active;

    pt.strictly_complementary = true;
    for (int i = 0; i < p.player_count(); ++i) {
      const auto& pl = p.players[i];
      const Eigen::VectorXd slack = pl.G * pt.candidate.z - pl.g;
      const Eigen::VectorXd& top = pt.candidate.players[i].back().gamma;
      for (int r = 0; r < pl.m_ineq(); ++r) {
        const bool act = std::find(red.active[i].begin(), red.active[i].end(), r) != red.active[i].end();
        if (act ? !(top[r] > strict_tol) : !(slack[r] > strict_tol)) pt.strictly_complementary = false;
      }
    }
    bool dup = false;
    for (const auto& q : out) {
      if ((q.candidate.z - pt.candidate.z).norm() <= 1e-6 * (1.0 + pt.candidate.z.norm())) dup = true;
    }
    if (!dup) out.push_back(std::move(pt));
  }
  return out;
}

void write_matrix_csv(const Eigen::MatrixXd& m, std::ostream& out) {
  char buf[32];
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", m(r, c));
      if (c) out << ',';
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace goop
