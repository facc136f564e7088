#include "goop/kkt.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

namespace goop {

using nlohmann::json;

const char* to_string(Role role) {
  switch (role) {
    case Role::kZ: return "z";
    case Role::kPsi: return "psi";
    case Role::kPhi: return "phi";
    case Role::kLambda: return "lambda";
    case Role::kGamma: return "gamma";
    case Role::kS: return "s";
  }
  return "?";
}

const char* to_string(SystemKind kind) {
  switch (kind) {
    case SystemKind::kReduced: return "reduced";
    case SystemKind::kComplete: return "complete";
    case SystemKind::kPerturbedReduced: return "perturbed-reduced";
    case SystemKind::kPerturbedComplete: return "perturbed-complete";
  }
  return "?";
}

// ---------------------------------------------------------------- layout

const Segment& VariableLayout::append(int player, int level, Role role, int length) {
  segments_.push_back({player, level, role, dimension_, length});
  dimension_ += length;
  return segments_.back();
}

const Segment* VariableLayout::find(int player, int level, Role role) const {
  for (const auto& s : segments_) {
    if (s.player == player && s.level == level && s.role == role) return &s;
  }
  return nullptr;
}

std::vector<int> VariableLayout::slots(Role role) const {
  std::vector<int> out;
  for (const auto& s : segments_) {
    if (s.role != role) continue;
    for (int j = 0; j < s.length; ++j) out.push_back(s.offset + j);
  }
  return out;
}

json to_json(const VariableLayout& layout) {
  json segs = json::array();
  for (const auto& s : layout.segments()) {
    segs.push_back({{"player", s.player + 1},
                    {"level", s.level},
                    {"role", to_string(s.role)},
                    {"offset", s.offset},
                    {"length", s.length}});
  }
  return {{"dimension", layout.dimension()}, {"segments", segs}};
}

// ---------------------------------------------------------------- counters

SizeCount count_reduced(long long n, long long m_eq, long long m_ineq, int K) {
  if (K < 1 || n < 0 || m_eq < 0 || m_ineq < 0) {
    throw std::invalid_argument("count_reduced: arguments out of range");
  }
  const long long k = K;
  SizeCount c;
  c.variables = (1 + k * (k - 1) / 2) * n + k * m_eq + k * (k + 1) / 2 * m_ineq;
  c.f_rows = k * n + m_eq + k * m_ineq;
  c.g_rows = (k + 1) * m_ineq;
  return c;
}

SizeCount count_complete(long long n, long long m_eq, long long m_ineq, int K) {
  if (K < 1 || K > 60 || n < 0 || m_eq < 0 || m_ineq < 0) {
    throw std::invalid_argument("count_complete: arguments out of range");
  }
  const long long two = 1LL << (K - 1);
  SizeCount c;
  c.variables = two * (n + m_eq + K * m_ineq);
  c.f_rows = c.variables;
  c.g_rows = 2 * two * m_ineq;
  return c;
}

SizeCount count_reduced(const GoopProblem& p) {
  SizeCount total;
  for (const auto& pl : p.players) total += count_reduced(pl.n, pl.m_eq(), pl.m_ineq(), pl.levels());
  return total;
}

SizeCount count_complete(const GoopProblem& p) {
  SizeCount total;
  for (const auto& pl : p.players) total += count_complete(pl.n, pl.m_eq(), pl.m_ineq(), pl.levels());
  return total;
}

// ---------------------------------------------------------------- system data

struct KktSystem::Data {
  SystemKind kind;
  VariableLayout layout;
  VariableSpace space;
  std::vector<Expression> f, g;
  std::vector<RowTag> tags;
  std::vector<ComplementarityPair> pairs;
  std::vector<int> positive;
  std::vector<std::vector<Expression>> lagrangians;
  Eigen::VectorXd rho_rows;  // 1 on rows that carry −ρ
  ExpressionTape f_tape, g_tape, jac_tape, pair_tape;
  std::vector<int> jac_rows, jac_cols;
  std::vector<KktSystem::PlayerShape> shapes;
  // Complete systems only: tags of each player's F̄_1 rows in recursion order.
  std::vector<std::vector<RowTag>> complete_tags;
};

SystemKind KktSystem::kind() const { return data_->kind; }
bool KktSystem::perturbed() const {
  return data_->kind == SystemKind::kPerturbedReduced ||
         data_->kind == SystemKind::kPerturbedComplete;
}
const VariableLayout& KktSystem::layout() const { return data_->layout; }
const VariableSpace& KktSystem::space() const { return data_->space; }
int KktSystem::f_rows() const { return static_cast<int>(data_->f.size()); }
int KktSystem::g_rows() const { return static_cast<int>(data_->g.size()); }
const std::vector<Expression>& KktSystem::f_expressions() const { return data_->f; }
const std::vector<Expression>& KktSystem::g_expressions() const { return data_->g; }
const std::vector<RowTag>& KktSystem::row_tags() const { return data_->tags; }
const std::vector<ComplementarityPair>& KktSystem::pairs() const { return data_->pairs; }
const std::vector<int>& KktSystem::positive_slots() const { return data_->positive; }
const std::vector<std::vector<Expression>>& KktSystem::lagrangians() const {
  return data_->lagrangians;
}
const std::vector<KktSystem::PlayerShape>& KktSystem::player_shapes() const {
  return data_->shapes;
}
const std::vector<std::vector<RowTag>>& KktSystem::complete_row_tags() const {
  return data_->complete_tags;
}
int KktSystem::jacobian_nonzeros() const { return static_cast<int>(data_->jac_rows.size()); }

KktSystem KktSystem::with_rho(double rho) const {
  if (perturbed() && !(rho > 0)) throw std::invalid_argument("rho must be positive");
  return KktSystem(data_, rho);
}

Eigen::VectorXd KktSystem::F(const Eigen::VectorXd& y) const {
  if (y.size() != dimension()) throw std::invalid_argument("iterate has wrong dimension");
  Eigen::VectorXd out = data_->f_tape.evaluate(y);
  if (perturbed()) out -= rho_ * data_->rho_rows;
  return out;
}

Eigen::VectorXd KktSystem::G(const Eigen::VectorXd& y) const {
  if (y.size() != dimension()) throw std::invalid_argument("iterate has wrong dimension");
  return data_->g_tape.evaluate(y);
}

Eigen::MatrixXd KktSystem::jacobian(const Eigen::VectorXd& y) const {
  if (y.size() != dimension()) throw std::invalid_argument("iterate has wrong dimension");
  Eigen::VectorXd vals = data_->jac_tape.evaluate(y);
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(f_rows(), dimension());
  for (std::size_t e = 0; e < data_->jac_rows.size(); ++e) {
    J(data_->jac_rows[e], data_->jac_cols[e]) += vals[static_cast<Eigen::Index>(e)];
  }
  return J;
}

Eigen::VectorXd KktSystem::pack(const Candidate& c) const {
  Eigen::VectorXd y = Eigen::VectorXd::Zero(dimension());
  const int np = static_cast<int>(data_->shapes.size());
  if (c.z.size() != space().block_dimension(kPrimalBlock)) {
    throw std::invalid_argument("candidate z has the wrong dimension");
  }
  if (static_cast<int>(c.players.size()) != np) {
    throw std::invalid_argument("candidate has the wrong number of players");
  }
  for (const auto& s : layout().segments()) {
    if (s.role == Role::kZ) {
      y.segment(s.offset, s.length) = c.z.segment(s.offset, s.length);
      continue;
    }
    const auto& levels = c.players[s.player];
    if (static_cast<int>(levels.size()) != data_->shapes[s.player].levels) {
      throw std::invalid_argument("candidate player " + std::to_string(s.player + 1) +
                                  " has the wrong number of levels");
    }
    const LevelDuals& d = levels[s.level - 1];
    const Eigen::VectorXd* v = nullptr;
    switch (s.role) {
      case Role::kPsi: v = &d.psi; break;
      case Role::kPhi: v = &d.phi; break;
      case Role::kLambda: v = &d.lambda; break;
      case Role::kGamma: v = &d.gamma; break;
      case Role::kS: v = &d.s; break;
      default: break;
    }
    if (v->size() != s.length) {
      throw std::invalid_argument(std::string("candidate ") + to_string(s.role) + " of player " +
                                  std::to_string(s.player + 1) + " level " +
                                  std::to_string(s.level) + " has length " +
                                  std::to_string(v->size()) + ", expected " +
                                  std::to_string(s.length));
    }
    y.segment(s.offset, s.length) = *v;
  }
  return y;
}

Candidate KktSystem::unpack(const Eigen::VectorXd& y) const {
  if (y.size() != dimension()) throw std::invalid_argument("iterate has wrong dimension");
  Candidate c;
  const int n = space().block_dimension(kPrimalBlock);
  c.z = y.head(n);
  c.players.resize(data_->shapes.size());
  for (std::size_t i = 0; i < c.players.size(); ++i) {
    c.players[i].resize(data_->shapes[i].levels);
  }
  for (const auto& s : layout().segments()) {
    if (s.role == Role::kZ) continue;
    LevelDuals& d = c.players[s.player][s.level - 1];
    Eigen::VectorXd v = y.segment(s.offset, s.length);
    switch (s.role) {
      case Role::kPsi: d.psi = v; break;
      case Role::kPhi: d.phi = v; break;
      case Role::kLambda: d.lambda = v; break;
      case Role::kGamma: d.gamma = v; break;
      case Role::kS: d.s = v; break;
      default: break;
    }
  }
  return c;
}

// ---------------------------------------------------------------- assembly helpers

namespace {

std::string block_name(Role role, int player, int level) {
  return std::string(to_string(role)) + "_" + std::to_string(player + 1) + "_" +
         std::to_string(level);
}

Expression dual(Role role, int player, int level, int r) {
  return Expression::variable(block_name(role, player, level), r);
}

VarKey dual_key(Role role, int player, int level, int r) {
  return make_var_key(intern_symbol(block_name(role, player, level)), r);
}

Expression dot(const std::vector<Expression>& a, const std::vector<Expression>& b) {
  std::vector<Expression> terms;
  terms.reserve(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) terms.push_back(a[j] * b[j]);
  return Expression::sum(std::move(terms));
}

std::vector<Expression> dual_vector(Role role, int player, int level, int length) {
  std::vector<Expression> v;
  v.reserve(static_cast<std::size_t>(length));
  for (int r = 0; r < length; ++r) v.push_back(dual(role, player, level, r));
  return v;
}

std::vector<Expression> own_gradient(Differentiator& d, const Expression& e, int offset, int n) {
  std::vector<Expression> g;
  g.reserve(static_cast<std::size_t>(n));
  int z = intern_symbol(kPrimalBlock);
  for (int j = 0; j < n; ++j) g.push_back(d(e, make_var_key(z, offset + j)));
  return g;
}

struct Builder {
  SystemKind kind;
  std::shared_ptr<KktSystem::Data> data = std::make_shared<KktSystem::Data>();
  Differentiator diff;

  explicit Builder(SystemKind k) { data->kind = k; }

  void add_segment(int player, int level, Role role, int length) {
    data->layout.append(player, level, role, length);
    if (length > 0 && role != Role::kZ) {
      data->space.add_block(block_name(role, player, level), length);
    }
  }

  int slot_of(VarKey key) const { return data->space.slot(key); }

  void add_f(const Expression& e, RowTag tag, bool carries_rho = false) {
    data->f.push_back(e);
    data->tags.push_back(tag);
    rho_flags.push_back(carries_rho ? 1.0 : 0.0);
  }

  void finish(const GoopProblem& p) {
    for (const auto& pl : p.players) {
      data->shapes.push_back({pl.n, pl.m_eq(), pl.m_ineq(), pl.levels()});
    }
    data->rho_rows = Eigen::Map<Eigen::VectorXd>(rho_flags.data(),
                                                 static_cast<Eigen::Index>(rho_flags.size()));
    std::vector<Expression> jac;
    for (std::size_t r = 0; r < data->f.size(); ++r) {
      for (VarKey k : data->f[r].dependencies()) {
        int col = data->space.slot(k);
        if (col < 0) throw std::logic_error("assembled row references an unknown variable");
        Expression d = diff(data->f[r], k);
        if (d.is_zero()) continue;
        data->jac_rows.push_back(static_cast<int>(r));
        data->jac_cols.push_back(col);
        jac.push_back(std::move(d));
      }
    }
    data->f_tape = ExpressionTape(data->f, data->space);
    data->g_tape = ExpressionTape(data->g, data->space);
    data->jac_tape = ExpressionTape(jac, data->space);
    std::vector<Expression> as;
    for (const auto& pr : data->pairs) as.push_back(pr.a);
    data->pair_tape = ExpressionTape(as, data->space);
  }

  std::vector<double> rho_flags;
};

void require_valid(const GoopProblem& p) { validate(p); }

// Reduced system pieces for one player.
struct ReducedPlayer {
  std::vector<Expression> lagrangian;            // [k-1]
  std::vector<std::vector<Expression>> stat;     // [k-1], ∇_{z^i} L_k
  std::vector<Expression> h, g;
  std::vector<std::vector<Expression>> gamma;    // [k-1]
};

ReducedPlayer build_reduced_player(const GoopProblem& p, int i, Differentiator& d) {
  const PlayerSpec& pl = p.players[i];
  const int K = pl.levels();
  const int n = pl.n, mi = pl.m_ineq(), me = pl.m_eq();
  const int off = p.offset(i);
  ReducedPlayer out;
  out.h = pl.h;
  out.g = pl.g;
  out.lagrangian.resize(K);
  out.stat.resize(K);
  out.gamma.resize(K);
  for (int k = 1; k <= K; ++k) out.gamma[k - 1] = dual_vector(Role::kGamma, i, k, mi);

  for (int k = K; k >= 1; --k) {
    std::vector<Expression> terms{pl.objectives[k - 1]};
    terms.push_back(-dot(dual_vector(Role::kLambda, i, k, me), pl.h));
    terms.push_back(-dot(out.gamma[k - 1], pl.g));
    if (k < K) {
      std::vector<Expression> pi;
      for (int j = k + 1; j <= K; ++j) {
        pi.insert(pi.end(), out.stat[j - 1].begin(), out.stat[j - 1].end());
      }
      terms.push_back(-dot(dual_vector(Role::kPsi, i, k, (K - k) * n), pi));
      auto phi = dual_vector(Role::kPhi, i, k, (K - k) * mi);
      for (int l = 1; l <= K - k; ++l) {
        const auto& gam = out.gamma[K - l];  // γ_{K−ℓ+1}
        for (int r = 0; r < mi; ++r) {
          terms.push_back(-(phi[(l - 1) * mi + r] * pl.g[r] * gam[r]));
        }
      }
    }
    out.lagrangian[k - 1] = Expression::sum(std::move(terms));
    out.stat[k - 1] = own_gradient(d, out.lagrangian[k - 1], off, n);
  }
  return out;
}

void add_primal_segments(Builder& b, const GoopProblem& p) {
  b.data->space.add_block(kPrimalBlock, p.dimension());
  for (int i = 0; i < p.player_count(); ++i) b.add_segment(i, 0, Role::kZ, p.players[i].n);
}

void add_reduced_dual_segments(Builder& b, const GoopProblem& p) {
  for (int i = 0; i < p.player_count(); ++i) {
    const auto& pl = p.players[i];
    const int K = pl.levels();
    for (int k = 1; k <= K; ++k) {
      b.add_segment(i, k, Role::kPsi, (K - k) * pl.n);
      b.add_segment(i, k, Role::kPhi, (K - k) * pl.m_ineq());
      b.add_segment(i, k, Role::kLambda, pl.m_eq());
      b.add_segment(i, k, Role::kGamma, pl.m_ineq());
    }
  }
}

KktSystem build_reduced(const GoopProblem& p, bool perturbed, double rho) {
  require_valid(p);
  Builder b(perturbed ? SystemKind::kPerturbedReduced : SystemKind::kReduced);
  add_primal_segments(b, p);
  add_reduced_dual_segments(b, p);
  if (perturbed) {
    for (int i = 0; i < p.player_count(); ++i) {
      for (int k = 1; k <= p.players[i].levels(); ++k) {
        b.add_segment(i, k, Role::kS, p.players[i].m_ineq());
      }
    }
  }

  for (int i = 0; i < p.player_count(); ++i) {
    const auto& pl = p.players[i];
    const int K = pl.levels(), mi = pl.m_ineq();
    ReducedPlayer rp = build_reduced_player(p, i, b.diff);
    b.data->lagrangians.push_back(rp.lagrangian);
    for (int k = 1; k <= K; ++k) {
      for (int r = 0; r < pl.n; ++r) {
        b.add_f(rp.stat[k - 1][r], {i, k, RowKind::kStationarity, false, r});
      }
    }
    for (int r = 0; r < pl.m_eq(); ++r) b.add_f(pl.h[r], {i, pl.levels(), RowKind::kEquality, false, r});

    for (int k = 1; k <= K; ++k) {
      for (int r = 0; r < mi; ++r) {
        ComplementarityPair pr{i, k, pl.g[r], b.slot_of(dual_key(Role::kGamma, i, k, r)), -1};
        if (perturbed) pr.s_slot = b.slot_of(dual_key(Role::kS, i, k, r));
        b.data->pairs.push_back(pr);
      }
    }
    if (!perturbed) {
      for (int k = 1; k <= K; ++k) {
        for (int r = 0; r < mi; ++r) {
          b.add_f(pl.g[r] * rp.gamma[k - 1][r], {i, k, RowKind::kComplementarity, true, r});
        }
      }
    } else {
      for (int k = 1; k <= K; ++k) {
        for (int r = 0; r < mi; ++r) {
          b.add_f(pl.g[r] - dual(Role::kS, i, k, r), {i, k, RowKind::kSlack, true, r});
        }
      }
      for (int k = 1; k <= K; ++k) {
        for (int r = 0; r < mi; ++r) {
          b.add_f(dual(Role::kS, i, k, r) * rp.gamma[k - 1][r],
                  {i, k, RowKind::kComplementarity, true, r}, true);
        }
      }
    }
    for (int r = 0; r < mi; ++r) b.data->g.push_back(pl.g[r]);
    for (int k = 1; k <= K; ++k) {
      for (int r = 0; r < mi; ++r) b.data->g.push_back(rp.gamma[k - 1][r]);
    }
  }
  if (perturbed) {
    for (const auto& pr : b.data->pairs) {
      b.data->positive.push_back(pr.s_slot);
      b.data->positive.push_back(pr.gamma_slot);
    }
  }
  b.finish(p);
  return KktSystem(b.data, perturbed ? rho : 0.0);
}

// Complete system rows for one player, built from the innermost level out.
struct CompleteRow {
  Expression expr;
  RowTag tag;
  bool is_pair = false;
  Expression a;
  VarKey gamma = 0;
};

struct CompleteLevel {
  std::vector<CompleteRow> rows;   // F̄_k
  std::vector<Expression> gbar;    // Ḡ_k
  std::vector<VarKey> induced;     // keys of η̄_{k:K}
  int stat_rows = 0, comp_rows = 0, eq_rows = 0;
};

struct CompletePlayer {
  std::vector<CompleteRow> rows;
  std::vector<Expression> gbar;
  std::vector<Expression> lagrangian;
  std::vector<std::array<int, 4>> dims;  // per level: ψ̄, φ̄, λ̄, γ̄ lengths
};

CompletePlayer build_complete_player(const GoopProblem& p, int i, Differentiator& d) {
  const PlayerSpec& pl = p.players[i];
  const int K = pl.levels(), n = pl.n, me = pl.m_eq(), mi = pl.m_ineq();
  const int off = p.offset(i);
  CompletePlayer out;
  out.lagrangian.resize(K);
  out.dims.resize(K);

  auto count = [](CompleteLevel& lv) {
    lv.stat_rows = lv.comp_rows = lv.eq_rows = 0;
    for (const auto& r : lv.rows) {
      if (r.tag.kind == RowKind::kStationarity || r.tag.kind == RowKind::kInducedStationarity) {
        ++lv.stat_rows;
      } else if (r.tag.kind == RowKind::kComplementarity) {
        ++lv.comp_rows;
      } else {
        ++lv.eq_rows;
      }
    }
  };

  // Innermost level.
  CompleteLevel cur;
  {
    auto lam = dual_vector(Role::kLambda, i, K, me);
    auto gam = dual_vector(Role::kGamma, i, K, mi);
    Expression L = pl.objectives[K - 1] - dot(lam, pl.h) - dot(gam, pl.g);
    out.lagrangian[K - 1] = L;
    auto st = own_gradient(d, L, off, n);
    for (int r = 0; r < n; ++r) cur.rows.push_back({st[r], {i, K, RowKind::kStationarity, false, r}});
    for (int r = 0; r < me; ++r) cur.rows.push_back({pl.h[r], {i, K, RowKind::kEquality, false, r}});
    for (int r = 0; r < mi; ++r) {
      cur.rows.push_back({pl.g[r] * gam[r], {i, K, RowKind::kComplementarity, true, r}, true,
                          pl.g[r], dual_key(Role::kGamma, i, K, r)});
    }
    cur.gbar = pl.g;
    cur.gbar.insert(cur.gbar.end(), gam.begin(), gam.end());
    for (int r = 0; r < me; ++r) cur.induced.push_back(dual_key(Role::kLambda, i, K, r));
    for (int r = 0; r < mi; ++r) cur.induced.push_back(dual_key(Role::kGamma, i, K, r));
    out.dims[K - 1] = {0, 0, me, mi};
    count(cur);
  }

  for (int k = K - 1; k >= 1; --k) {
    const CompleteLevel& inner = cur;
    auto psi = dual_vector(Role::kPsi, i, k, inner.stat_rows);
    auto phi = dual_vector(Role::kPhi, i, k, inner.comp_rows);
    auto lam = dual_vector(Role::kLambda, i, k, inner.eq_rows);
    auto gam = dual_vector(Role::kGamma, i, k, static_cast<int>(inner.gbar.size()));
    out.dims[k - 1] = {inner.stat_rows, inner.comp_rows, inner.eq_rows,
                       static_cast<int>(inner.gbar.size())};

    std::vector<Expression> terms{pl.objectives[k - 1]};
    int si = 0, ci = 0, ei = 0;
    for (const auto& r : inner.rows) {
      if (r.tag.kind == RowKind::kStationarity || r.tag.kind == RowKind::kInducedStationarity) {
        terms.push_back(-(psi[si++] * r.expr));
      } else if (r.tag.kind == RowKind::kComplementarity) {
        terms.push_back(-(phi[ci++] * r.expr));
      } else {
        terms.push_back(-(lam[ei++] * r.expr));
      }
    }
    terms.push_back(-dot(gam, inner.gbar));
    Expression L = Expression::sum(std::move(terms));
    out.lagrangian[k - 1] = L;

    CompleteLevel next;
    auto st = own_gradient(d, L, off, n);
    for (int r = 0; r < n; ++r) next.rows.push_back({st[r], {i, k, RowKind::kStationarity, false, r}});
    int idx = 0;
    for (VarKey key : inner.induced) {
      next.rows.push_back({d(L, key), {i, k, RowKind::kInducedStationarity, false, idx++}});
    }
    for (std::size_t r = 0; r < inner.gbar.size(); ++r) {
      bool g_pair = static_cast<int>(r) < mi;
      next.rows.push_back({inner.gbar[r] * gam[r],
                           {i, k, RowKind::kComplementarity, g_pair, static_cast<int>(r)},
                           true, inner.gbar[r], dual_key(Role::kGamma, i, k, static_cast<int>(r))});
    }
    next.rows.insert(next.rows.end(), inner.rows.begin(), inner.rows.end());

    next.gbar = pl.g;
    next.gbar.insert(next.gbar.end(), gam.begin(), gam.end());
    next.gbar.insert(next.gbar.end(), inner.gbar.begin() + mi, inner.gbar.end());

    for (auto* v : {&psi, &phi, &lam, &gam}) {
      for (const auto& e : *v) next.induced.push_back(e.variable_key());
    }
    next.induced.insert(next.induced.end(), inner.induced.begin(), inner.induced.end());
    count(next);
    cur = std::move(next);
  }
  out.rows = std::move(cur.rows);
  out.gbar = std::move(cur.gbar);
  return out;
}

KktSystem build_complete(const GoopProblem& p, long long cap, bool perturbed, double rho) {
  require_valid(p);
  SizeCount c = count_complete(p);
  if (c.variables > cap || c.system() > cap) {
    throw ComplexityError("complete system too large: " + std::to_string(c.variables) +
                          " variables and " + std::to_string(c.system()) +
                          " rows exceed the cap of " + std::to_string(cap));
  }
  Builder b(perturbed ? SystemKind::kPerturbedComplete : SystemKind::kComplete);
  std::vector<CompletePlayer> players;
  for (int i = 0; i < p.player_count(); ++i) players.push_back(build_complete_player(p, i, b.diff));

  add_primal_segments(b, p);
  for (int i = 0; i < p.player_count(); ++i) {
    for (int k = 1; k <= p.players[i].levels(); ++k) {
      const auto& dims = players[i].dims[k - 1];
      b.add_segment(i, k, Role::kPsi, dims[0]);
      b.add_segment(i, k, Role::kPhi, dims[1]);
      b.add_segment(i, k, Role::kLambda, dims[2]);
      b.add_segment(i, k, Role::kGamma, dims[3]);
    }
  }
  // Slack count per (player, level) equals the number of pairs whose γ sits at that level.
  if (perturbed) {
    for (int i = 0; i < p.player_count(); ++i) {
      for (int k = 1; k <= p.players[i].levels(); ++k) {
        int count = 0;
        for (const auto& r : players[i].rows) {
          if (r.is_pair && r.tag.level == k) ++count;
        }
        b.add_segment(i, k, Role::kS, count);
      }
    }
  }

  for (int i = 0; i < p.player_count(); ++i) {
    CompletePlayer& cp = players[i];
    b.data->lagrangians.push_back(cp.lagrangian);
    std::vector<RowTag> tags;
    for (const auto& r : cp.rows) tags.push_back(r.tag);
    b.data->complete_tags.push_back(tags);

    std::map<int, int> next_slack;  // per level
    std::vector<std::pair<const CompleteRow*, int>> pair_rows;
    for (const auto& r : cp.rows) {
      if (!r.is_pair) continue;
      ComplementarityPair pr{i, r.tag.level, r.a, b.slot_of(r.gamma), -1};
      int s_idx = next_slack[r.tag.level]++;
      if (perturbed) pr.s_slot = b.slot_of(dual_key(Role::kS, i, r.tag.level, s_idx));
      b.data->pairs.push_back(pr);
      pair_rows.push_back({&r, s_idx});
    }
    if (!perturbed) {
      for (const auto& r : cp.rows) b.add_f(r.expr, r.tag);
    } else {
      for (const auto& r : cp.rows) {
        if (!r.is_pair) b.add_f(r.expr, r.tag);
      }
      for (const auto& [r, s_idx] : pair_rows) {
        RowTag t = r->tag;
        t.kind = RowKind::kSlack;
        b.add_f(r->a - dual(Role::kS, i, t.level, s_idx), t);
      }
      for (const auto& [r, s_idx] : pair_rows) {
        b.add_f(dual(Role::kS, i, r->tag.level, s_idx) * Expression::variable(r->gamma), r->tag,
                true);
      }
    }
    b.data->g.insert(b.data->g.end(), cp.gbar.begin(), cp.gbar.end());
  }
  if (perturbed) {
    for (const auto& pr : b.data->pairs) {
      b.data->positive.push_back(pr.s_slot);
      b.data->positive.push_back(pr.gamma_slot);
    }
  }
  b.finish(p);
  return KktSystem(b.data, perturbed ? rho : 0.0);
}

}  // namespace

KktSystem assemble_reduced(const GoopProblem& p) { return build_reduced(p, false, 0.0); }

KktSystem assemble_perturbed(const GoopProblem& p, double rho) {
  if (!(rho > 0)) throw std::invalid_argument("assemble_perturbed: rho must be positive");
  return build_reduced(p, true, rho);
}

KktSystem assemble_complete(const GoopProblem& p, long long cap) {
  return build_complete(p, cap, false, 0.0);
}

KktSystem assemble_perturbed_complete(const GoopProblem& p, double rho, long long cap) {
  if (!(rho > 0)) throw std::invalid_argument("assemble_perturbed_complete: rho must be positive");
  return build_complete(p, cap, true, rho);
}

// ---------------------------------------------------------------- diagnostics

double jacobian_fd_check(const KktSystem& sys, const Eigen::VectorXd& y, double step) {
  Eigen::MatrixXd J = sys.jacobian(y);
  double worst = 0.0;
  Eigen::VectorXd yp = y;
  for (Eigen::Index c = 0; c < y.size(); ++c) {
    const double orig = yp[c];
    yp[c] = orig + step;
    Eigen::VectorXd up = sys.F(yp);
    yp[c] = orig - step;
    Eigen::VectorXd down = sys.F(yp);
    yp[c] = orig;
    Eigen::VectorXd fd = (up - down) / (2 * step);
    worst = std::max(worst, (J.col(c) - fd).cwiseAbs().maxCoeff());
  }
  return worst;
}

ResidualSummary residual_summary(const KktSystem& sys, const Eigen::VectorXd& y) {
  ResidualSummary out;
  Eigen::VectorXd f = sys.F(y);  // only stationarity and equality rows are read
  const auto& tags = sys.row_tags();
  for (std::size_t r = 0; r < tags.size(); ++r) {
    double v = std::abs(f[static_cast<Eigen::Index>(r)]);
    switch (tags[r].kind) {
      case RowKind::kStationarity:
      case RowKind::kInducedStationarity:
        out.stationarity_inf = std::max(out.stationarity_inf, v);
        break;
      case RowKind::kEquality:
        out.equality_inf = std::max(out.equality_inf, v);
        break;
      default:
        break;
    }
  }
  Eigen::VectorXd a = sys.pairs().empty() ? Eigen::VectorXd() : Eigen::VectorXd(sys.pairs().size());
  if (!sys.pairs().empty()) {
    std::vector<Expression> as;
    for (const auto& pr : sys.pairs()) as.push_back(pr.a);
    a = ExpressionTape(as, sys.space()).evaluate(y);
  }
  for (std::size_t j = 0; j < sys.pairs().size(); ++j) {
    double prod = a[static_cast<Eigen::Index>(j)] * y[sys.pairs()[j].gamma_slot];
    out.complementarity_inf = std::max(out.complementarity_inf, std::abs(prod));
  }
  out.f_inf = std::max({out.stationarity_inf, out.equality_inf, out.complementarity_inf});
  Eigen::VectorXd g = sys.G(y);
  out.g_min = g.size() > 0 ? g.minCoeff() : 0.0;
  return out;
}

// ---------------------------------------------------------------- lifting

Candidate lift_duals(const KktSystem& complete, const Candidate& solution, double tol) {
  if (complete.kind() != SystemKind::kComplete && complete.kind() != SystemKind::kPerturbedComplete) {
    throw std::invalid_argument("lift_duals needs a complete system");
  }
  Eigen::VectorXd y = complete.pack(solution);
  ResidualSummary rs = residual_summary(complete, y);
  if (rs.f_inf > tol || rs.g_min < -tol) {
    throw PreconditionError("lift_duals: input is not a complete-system solution (residual " +
                            std::to_string(rs.f_inf) + ", min G " + std::to_string(rs.g_min) + ")");
  }
  Candidate out;
  out.z = solution.z;
  const auto& shapes = complete.player_shapes();
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& sh = shapes[i];
    const int K = sh.levels, n = sh.n, mi = sh.m_ineq;
    const auto& tags = complete.complete_row_tags()[i];
    std::vector<LevelDuals> levels(K);
    for (int k = 1; k <= K; ++k) {
      const LevelDuals& cd = solution.players[i][k - 1];
      LevelDuals& d = levels[k - 1];
      d.lambda = cd.lambda;
      d.gamma = cd.gamma.head(mi);
      d.psi = Eigen::VectorXd::Zero((K - k) * n);
      d.phi = Eigen::VectorXd::Zero((K - k) * mi);
      // ψ̄_k and φ̄_k are indexed by the stationarity and complementarity rows
      // of the level-(k+1) system, which are the rows tagged deeper than k.
      int si = 0, ci = 0;
      for (const auto& t : tags) {
        if (t.level <= k) continue;
        if (t.kind == RowKind::kStationarity || t.kind == RowKind::kInducedStationarity) {
          if (t.kind == RowKind::kStationarity) d.psi[(t.level - k - 1) * n + t.index] = cd.psi[si];
          ++si;
        } else if (t.kind == RowKind::kComplementarity) {
          if (t.g_pair) {
            int l = K - t.level + 1;
            d.phi[(l - 1) * mi + t.index] = cd.phi[ci];
          }
          ++ci;
        }
      }
    }
    out.players.push_back(std::move(levels));
  }
  return out;
}

}  // namespace goop
