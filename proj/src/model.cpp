#include "goop/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "goop/linalg.hpp"

namespace goop {

using nlohmann::json;

// ---------------------------------------------------------------- problems

int GoopProblem::dimension() const {
  int n = 0;
  for (const auto& pl : players) n += pl.n;
  return n;
}

int GoopProblem::offset(int player) const {
  int off = 0;
  for (int i = 0; i < player; ++i) off += players.at(i).n;
  return off;
}

int GoopProblem::max_levels() const {
  int k = 0;
  for (const auto& pl : players) k = std::max(k, pl.levels());
  return k;
}

VariableSpace GoopProblem::primal_space() const {
  VariableSpace s;
  s.add_block(kPrimalBlock, dimension());
  return s;
}

int QuadraticGoop::dimension() const {
  int n = 0;
  for (const auto& pl : players) n += pl.n;
  return n;
}

int QuadraticGoop::offset(int player) const {
  int off = 0;
  for (int i = 0; i < player; ++i) off += players.at(i).n;
  return off;
}

int QuadraticGoop::max_levels() const {
  int k = 0;
  for (const auto& pl : players) k = std::max(k, pl.levels());
  return k;
}

bool QuadraticGoop::has_inequalities() const {
  for (const auto& pl : players) {
    if (pl.m_ineq() > 0) return true;
  }
  return false;
}

// ---------------------------------------------------------------- validation

namespace {

const char* kAssumedCompact = "compactness of the innermost feasible set is asserted by user";
const char* kAssumedLicq = "MPCC-LICQ is asserted by user";

void check_refs(const Expression& e, int n, int player, const std::string& what) {
  int z = intern_symbol(kPrimalBlock);
  for (VarKey k : e.dependencies()) {
    if (key_symbol(k) != z || key_index(k) >= n) {
      throw ModelError("player " + std::to_string(player + 1) + " " + what +
                       " references undeclared variable (" + symbol_name(key_symbol(k)) +
                       ", " + std::to_string(key_index(k)) + ")");
    }
  }
}

std::string tag(int player, const std::string& rest) {
  return "player " + std::to_string(player + 1) + ": " + rest;
}

}  // namespace

ValidationReport validate(const GoopProblem& p) {
  if (p.players.empty()) throw ModelError("problem has no players");
  ValidationReport report;
  const int n = p.dimension();
  for (int i = 0; i < p.player_count(); ++i) {
    const auto& pl = p.players[i];
    if (pl.n < 1) throw ModelError(tag(i, "decision dimension must be >= 1"));
    if (pl.levels() < 1) throw ModelError(tag(i, "needs at least one objective level"));
    for (int k = 0; k < pl.levels(); ++k) {
      check_refs(pl.objectives[k], n, i, "objective " + std::to_string(k + 1));
    }
    for (const auto& e : pl.h) check_refs(e, n, i, "equality constraint");
    for (const auto& e : pl.g) check_refs(e, n, i, "inequality constraint");
    if (pl.h.empty() && pl.g.empty()) {
      report.warnings.push_back(tag(i, "no constraints; feasible set is not compact"));
    }
  }
  report.assumed = {kAssumedCompact, kAssumedLicq};
  return report;
}

Eigen::MatrixXd stacked_own_block(const QuadraticGoop& p, bool inequalities) {
  int rows = 0;
  for (const auto& pl : p.players) rows += inequalities ? pl.m_ineq() : pl.m_eq();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(rows, p.dimension());
  int r = 0;
  for (int i = 0; i < p.player_count(); ++i) {
    const auto& pl = p.players[i];
    const Eigen::MatrixXd& a = inequalities ? pl.G : pl.H;
    int off = p.offset(i);
    out.block(r, off, a.rows(), pl.n) = a.middleCols(off, pl.n);
    r += static_cast<int>(a.rows());
  }
  return out;
}

ValidationReport validate(const QuadraticGoop& p) {
  if (p.players.empty()) throw ModelError("problem has no players");
  ValidationReport report;
  const int n = p.dimension();
  for (int i = 0; i < p.player_count(); ++i) {
    const auto& pl = p.players[i];
    if (pl.n < 1) throw ModelError(tag(i, "decision dimension must be >= 1"));
    if (pl.levels() < 1) throw ModelError(tag(i, "needs at least one objective level"));
    if (pl.q.size() != pl.Q.size()) throw ModelError(tag(i, "Q and q level counts differ"));
    for (int k = 0; k < pl.levels(); ++k) {
      const auto& Q = pl.Q[k];
      std::string lv = "level " + std::to_string(k + 1);
      if (Q.rows() != n || Q.cols() != n) throw ModelError(tag(i, lv + " Q must be n x n"));
      if (pl.q[k].size() != n) throw ModelError(tag(i, lv + " q must have length n"));
      if (!Q.allFinite() || !pl.q[k].allFinite()) {
        throw ModelError(tag(i, lv + " has non-finite entries"));
      }
      double scale = std::max(1.0, Q.cwiseAbs().maxCoeff());
      if ((Q - Q.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        throw ModelError(tag(i, lv + " Q is not symmetric"));
      }
      int off = p.offset(i);
      Eigen::MatrixXd own = Q.block(off, off, pl.n, pl.n);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(own, Eigen::EigenvaluesOnly);
      double min_eig = es.eigenvalues().minCoeff();
      if (min_eig < -1e-10) {
        report.warnings.push_back(tag(i, lv + " own block of Q is not positive semidefinite "
                                             "(min eigenvalue " + std::to_string(min_eig) + ")"));
      }
    }
    if (pl.H.cols() != n && pl.H.rows() > 0) throw ModelError(tag(i, "H must have n columns"));
    if (pl.G.cols() != n && pl.G.rows() > 0) throw ModelError(tag(i, "G must have n columns"));
    if (pl.h.size() != pl.H.rows()) throw ModelError(tag(i, "h length must equal rows of H"));
    if (pl.g.size() != pl.G.rows()) throw ModelError(tag(i, "g length must equal rows of G"));
    if (pl.m_eq() == 0 && pl.m_ineq() == 0) {
      report.warnings.push_back(tag(i, "no constraints; feasible set is not compact"));
    }
  }
  Eigen::MatrixXd h_hat = stacked_own_block(p, false);
  if (h_hat.rows() > 0 && numerical_rank(h_hat) < h_hat.rows()) {
    report.warnings.push_back("stacked own-block equality matrix is not full row rank");
  }
  report.assumed = {kAssumedCompact, kAssumedLicq};
  return report;
}

// ---------------------------------------------------------------- padding

QuadraticGoop pad_levels(const QuadraticGoop& p, int K) {
  if (K < p.max_levels()) {
    throw std::invalid_argument("pad_levels: K is below the largest level count");
  }
  QuadraticGoop out = p;
  const int n = p.dimension();
  for (auto& pl : out.players) {
    while (pl.levels() < K) {
      pl.Q.push_back(Eigen::MatrixXd::Zero(n, n));
      pl.q.push_back(Eigen::VectorXd::Zero(n));
    }
  }
  return out;
}

GoopProblem pad_levels(const GoopProblem& p, int K) {
  if (K < p.max_levels()) {
    throw std::invalid_argument("pad_levels: K is below the largest level count");
  }
  GoopProblem out = p;
  for (auto& pl : out.players) {
    while (pl.levels() < K) pl.objectives.emplace_back(0.0);
  }
  return out;
}

// ---------------------------------------------------------------- lifting

namespace {

Expression zvar(int j) { return Expression::variable(kPrimalBlock, j); }

Expression affine_row(const Eigen::RowVectorXd& a, double b) {
  std::vector<Expression> terms;
  for (Eigen::Index j = 0; j < a.size(); ++j) {
    if (a[j] != 0.0) terms.push_back(Expression(a[j]) * zvar(static_cast<int>(j)));
  }
  if (b != 0.0) terms.emplace_back(-b);
  return Expression::sum(std::move(terms));
}

Expression quadratic_form(const Eigen::MatrixXd& Q, const Eigen::VectorXd& q) {
  std::vector<Expression> terms;
  const Eigen::Index n = Q.rows();
  for (Eigen::Index a = 0; a < n; ++a) {
    if (Q(a, a) != 0.0) {
      terms.push_back(Expression(0.5 * Q(a, a)) * pow(zvar(static_cast<int>(a)), 2));
    }
    for (Eigen::Index b = a + 1; b < n; ++b) {
      double c = 0.5 * (Q(a, b) + Q(b, a));
      if (c != 0.0) {
        terms.push_back(Expression(c) * zvar(static_cast<int>(a)) * zvar(static_cast<int>(b)));
      }
    }
    if (q[a] != 0.0) terms.push_back(Expression(q[a]) * zvar(static_cast<int>(a)));
  }
  return Expression::sum(std::move(terms));
}

}  // namespace

GoopProblem lift_quadratic(const QuadraticGoop& p) {
  GoopProblem out;
  for (const auto& pl : p.players) {
    PlayerSpec spec;
    spec.n = pl.n;
    for (int k = 0; k < pl.levels(); ++k) {
      spec.objectives.push_back(quadratic_form(pl.Q[k], pl.q[k]));
    }
    for (Eigen::Index r = 0; r < pl.H.rows(); ++r) spec.h.push_back(affine_row(pl.H.row(r), pl.h[r]));
    for (Eigen::Index r = 0; r < pl.G.rows(); ++r) spec.g.push_back(affine_row(pl.G.row(r), pl.g[r]));
    out.players.push_back(std::move(spec));
  }
  return out;
}

// ---------------------------------------------------------------- JSON

namespace {

Eigen::VectorXd vec_from_json(const json& j) {
  if (!j.is_array()) throw ModelError("expected a numeric array");
  Eigen::VectorXd v(j.size());
  for (std::size_t r = 0; r < j.size(); ++r) v[r] = j[r].get<double>();
  return v;
}

Eigen::MatrixXd mat_from_json(const json& j, Eigen::Index cols) {
  if (!j.is_array()) throw ModelError("expected a matrix as an array of rows");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || static_cast<Eigen::Index>(j[r].size()) != cols) {
      throw ModelError("matrix row " + std::to_string(r) + " has the wrong length");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), c) = j[r][c].get<double>();
  }
  return m;
}

json vec_to_json(const Eigen::VectorXd& v) {
  json j = json::array();
  for (Eigen::Index r = 0; r < v.size(); ++r) j.push_back(v[r]);
  return j;
}

json mat_to_json(const Eigen::MatrixXd& m) {
  json j = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    j.push_back(std::move(row));
  }
  return j;
}

std::vector<Expression> exprs_from_json(const json& j, const char* what) {
  std::vector<Expression> out;
  if (j.is_null()) return out;
  if (!j.is_array()) throw ModelError(std::string(what) + " must be an array of s-expressions");
  for (const auto& s : j) out.push_back(parse_sexpr(s.get<std::string>()));
  return out;
}

json exprs_to_json(const std::vector<Expression>& es) {
  json j = json::array();
  for (const auto& e : es) j.push_back(to_sexpr(e));
  return j;
}

}  // namespace

GoopProblem problem_from_json(const json& j) {
  if (j.contains("quadratic")) return lift_quadratic(quadratic_from_json(j));
  if (!j.contains("players") || !j["players"].is_array()) {
    throw ModelError("problem file needs a 'players' array or a 'quadratic' object");
  }
  GoopProblem p;
  for (const auto& pj : j["players"]) {
    PlayerSpec spec;
    spec.n = pj.at("n").get<int>();
    spec.objectives = exprs_from_json(pj.at("objectives"), "objectives");
    spec.h = exprs_from_json(pj.value("h", json::array()), "h");
    spec.g = exprs_from_json(pj.value("g", json::array()), "g");
    if (pj.contains("K") && pj["K"].get<int>() != spec.levels()) {
      throw ModelError("player K does not match the number of objectives");
    }
    p.players.push_back(std::move(spec));
  }
  validate(p);
  return p;
}

QuadraticGoop quadratic_from_json(const json& root) {
  const json& j = root.contains("quadratic") ? root.at("quadratic") : root;
  QuadraticGoop p;
  const int N = j.at("N").get<int>();
  std::vector<int> dims = j.at("n").get<std::vector<int>>();
  if (static_cast<int>(dims.size()) != N) throw ModelError("'n' must list one dimension per player");
  int n = 0;
  for (int d : dims) n += d;
  std::vector<int> levels;
  if (j.at("levels").is_array()) {
    levels = j["levels"].get<std::vector<int>>();
  } else {
    levels.assign(N, j["levels"].get<int>());
  }
  if (static_cast<int>(levels.size()) != N) throw ModelError("'levels' must be one count per player");
  for (int i = 0; i < N; ++i) {
    QuadraticPlayer pl;
    pl.n = dims[i];
    const json& qi = j.at("Q").at(i);
    const json& qvi = j.at("q").at(i);
    if (static_cast<int>(qi.size()) != levels[i] || static_cast<int>(qvi.size()) != levels[i]) {
      throw ModelError("player " + std::to_string(i + 1) + ": Q/q level count mismatch");
    }
    for (int k = 0; k < levels[i]; ++k) {
      pl.Q.push_back(mat_from_json(qi[k], n));
      pl.q.push_back(vec_from_json(qvi[k]));
    }
    pl.H = j.contains("H") ? mat_from_json(j["H"].at(i), n) : Eigen::MatrixXd(0, n);
    pl.h = j.contains("h") ? vec_from_json(j["h"].at(i)) : Eigen::VectorXd(0);
    pl.G = j.contains("G") ? mat_from_json(j["G"].at(i), n) : Eigen::MatrixXd(0, n);
    pl.g = j.contains("g") ? vec_from_json(j["g"].at(i)) : Eigen::VectorXd(0);
    p.players.push_back(std::move(pl));
  }
  validate(p);
  return p;
}

json to_json(const GoopProblem& p) {
  json players = json::array();
  for (const auto& pl : p.players) {
    players.push_back({{"n", pl.n},
                       {"K", pl.levels()},
                       {"objectives", exprs_to_json(pl.objectives)},
                       {"h", exprs_to_json(pl.h)},
                       {"g", exprs_to_json(pl.g)}});
  }
  return {{"players", players}};
}

json to_json(const QuadraticGoop& p) {
  json dims = json::array(), levels = json::array(), Q = json::array(), q = json::array();
  json H = json::array(), h = json::array(), G = json::array(), g = json::array();
  for (const auto& pl : p.players) {
    dims.push_back(pl.n);
    levels.push_back(pl.levels());
    json qs = json::array(), vs = json::array();
    for (int k = 0; k < pl.levels(); ++k) {
      qs.push_back(mat_to_json(pl.Q[k]));
      vs.push_back(vec_to_json(pl.q[k]));
    }
    Q.push_back(qs);
    q.push_back(vs);
    H.push_back(mat_to_json(pl.H));
    h.push_back(vec_to_json(pl.h));
    G.push_back(mat_to_json(pl.G));
    g.push_back(vec_to_json(pl.g));
  }
  return {{"quadratic",
           {{"N", p.player_count()}, {"n", dims}, {"levels", levels}, {"Q", Q}, {"q", q},
            {"H", H}, {"h", h}, {"G", G}, {"g", g}}}};
}

json to_json(const Candidate& c) {
  json players = json::array();
  for (const auto& pl : c.players) {
    json levels = json::array();
    for (const auto& lv : pl) {
      json l = {{"psi", vec_to_json(lv.psi)},
                {"phi", vec_to_json(lv.phi)},
                {"lambda", vec_to_json(lv.lambda)},
                {"gamma", vec_to_json(lv.gamma)}};
      if (lv.s.size() > 0) l["s"] = vec_to_json(lv.s);
      levels.push_back(std::move(l));
    }
    players.push_back({{"levels", levels}});
  }
  return {{"z", vec_to_json(c.z)}, {"players", players}};
}

Candidate candidate_from_json(const json& j) {
  Candidate c;
  c.z = vec_from_json(j.at("z"));
  for (const auto& pj : j.at("players")) {
    std::vector<LevelDuals> levels;
    for (const auto& lj : pj.at("levels")) {
      LevelDuals d;
      d.psi = vec_from_json(lj.value("psi", json::array()));
      d.phi = vec_from_json(lj.value("phi", json::array()));
      d.lambda = vec_from_json(lj.value("lambda", json::array()));
      d.gamma = vec_from_json(lj.value("gamma", json::array()));
      d.s = vec_from_json(lj.value("s", json::array()));
      levels.push_back(std::move(d));
    }
    c.players.push_back(std::move(levels));
  }
  return c;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ModelError("'" + path + "': " + e.what());
  }
}

GoopProblem load_problem(const std::string& path) {
  return problem_from_json(read_json_file(path));
}

}  // namespace goop
