#include "goop/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "goop/linalg.hpp"
#include "goop/quadratic.hpp"
#include "sampler.hpp"

namespace goop {

using nlohmann::json;

const char* to_string(Family f) {
  switch (f) {
    case Family::kQuadraticRank2: return "quadratic-rank2";
    case Family::kQuarticTop: return "nonquadratic-quartic-top";
    case Family::kExp: return "nonquadratic-exp";
  }
  return "?";
}

Family family_from_string(const std::string& s) {
  for (Family f : {Family::kQuadraticRank2, Family::kQuarticTop, Family::kExp}) {
    if (s == to_string(f)) return f;
  }
  throw std::invalid_argument("unknown family '" + s + "'");
}

void GeneratorConfig::check() const {
  if (N < 1 || n < 1 || K < 1) throw std::invalid_argument("N, n and K must be >= 1");
  if (m_eq < 0 || m_ineq < 0) throw std::invalid_argument("constraint counts must be >= 0");
  if (!(coupling >= 0)) throw std::invalid_argument("coupling must be >= 0");
  if (!(perturbation >= 0) || !(margin > 0)) {
    throw std::invalid_argument("perturbation must be >= 0 and margin > 0");
  }
}

json to_json(const GeneratorConfig& c) {
  return {{"seed", c.seed},   {"N", c.N},
          {"n", c.n},         {"m_eq", c.m_eq},
          {"m_ineq", c.m_ineq}, {"K", c.K},
          {"family", to_string(c.family)}, {"perturbation", c.perturbation},
          {"margin", c.margin}, {"normals_in_range", c.normals_in_range},
          {"coupling", c.coupling}};
}

std::uint64_t stream_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t x = master ^ (index * 0x9E3779B97F4A7C15ULL);
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

namespace {

using detail::Sampler;

Expression zvar(int j) { return Expression::variable(kPrimalBlock, j); }

Expression dot(const Eigen::VectorXd& v) {
  Expression e(0.0);
  for (Eigen::Index j = 0; j < v.size(); ++j) e = e + v[j] * zvar(static_cast<int>(j));
  return e;
}

}  // namespace

GeneratedInstance gen_instance(const GeneratorConfig& cfg) {
  cfg.check();
  Sampler rng(cfg.seed);
  const int n = cfg.N * cfg.n;
  GeneratedInstance out;
  out.z_feasible = rng.normal_vector(n);
  const Eigen::VectorXd& zf = out.z_feasible;

  const bool exp_family = cfg.family == Family::kExp;
  QuadraticGoop quad;
  std::vector<std::vector<Eigen::VectorXd>> exp_dirs(cfg.N);  // v_k for k = 2..K
  for (int i = 0; i < cfg.N; ++i) {
    QuadraticPlayer pl;
    pl.n = cfg.n;
    const int off = i * cfg.n;
    // Own rows of the innermost factor; own-block normals are drawn from its span.
    Eigen::MatrixXd inner;
    for (int k = 0; k < cfg.K; ++k) {
      Eigen::MatrixXd A = rng.normal(n, 2);
      for (int j = 0; j < cfg.N; ++j)
        if (j != i) A.middleRows(j * cfg.n, cfg.n) *= cfg.coupling;
      Eigen::MatrixXd Q = A * A.transpose();
      Q = 0.5 * (Q + Q.transpose());
      pl.Q.push_back(Q);
      pl.q.push_back(Q * rng.normal_vector(n));
      inner = A.middleRows(off, cfg.n);
    }
    if (exp_family) {
      for (int k = 1; k < cfg.K; ++k) {
        Eigen::VectorXd v = rng.normal_vector(n);
        exp_dirs[i].push_back(v / v.norm());
      }
      inner = cfg.K > 1 ? Eigen::MatrixXd(exp_dirs[i].back().segment(off, cfg.n))
                        : Eigen::MatrixXd::Identity(cfg.n, cfg.n);
    }
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      pl.H = rng.normal(cfg.m_eq, n);
      pl.G = rng.normal(cfg.m_ineq, n);
      for (int j = 0; j < cfg.N; ++j) {
        if (j == i) continue;
        pl.H.middleCols(j * cfg.n, cfg.n) *= cfg.coupling;
        pl.G.middleCols(j * cfg.n, cfg.n) *= cfg.coupling;
      }
      if (cfg.normals_in_range) {
        pl.G.middleCols(off, cfg.n) = rng.normal(cfg.m_ineq, inner.cols()) * inner.transpose();
      }
      Eigen::MatrixXd own(cfg.m_eq + cfg.m_ineq, cfg.n);
      own << pl.H.middleCols(off, cfg.n), pl.G.middleCols(off, cfg.n);
      // The nonlinear exp-family row replaces G's first row, so its rank is not required.
      if (exp_family && cfg.m_ineq > 0) own.row(cfg.m_eq).setZero();
      const int need = own.rows() - (exp_family && cfg.m_ineq > 0 ? 1 : 0);
      ok = own.rows() == 0 || numerical_rank(own) == need;
    }
    if (!ok) {
      throw GenerationError("player " + std::to_string(i + 1) +
                            ": no full-row-rank constraint block in 100 samples");
    }
    pl.h = pl.H * zf;
    pl.g = pl.G * zf;
    for (int r = 0; r < cfg.m_ineq; ++r) pl.g[r] -= cfg.margin + rng.uniform();
    quad.players.push_back(std::move(pl));
  }

  switch (cfg.family) {
    case Family::kQuadraticRank2:
      out.problem = lift_quadratic(quad);
      out.quadratic = quad;
      break;
    case Family::kQuarticTop: {
      out.problem = lift_quadratic(quad);
      Expression sum(0.0);
      for (int j = 0; j < n; ++j) sum = sum + zvar(j);
      for (auto& pl : out.problem.players) pl.objectives[0] = pow(sum, 4);
      break;
    }
    case Family::kExp: {
      out.problem = lift_quadratic(quad);
      Expression norm2(0.0);
      for (int j = 0; j < n; ++j) norm2 = norm2 + pow(zvar(j), 2);
      for (int i = 0; i < cfg.N; ++i) {
        auto& pl = out.problem.players[i];
        pl.objectives[0] = norm2;
        for (int k = 1; k < cfg.K; ++k) {
          const Expression t = dot(exp_dirs[i][k - 1]);
          pl.objectives[k] = exp(t) + exp(-t);
        }
        if (cfg.m_ineq == 0) continue;
        if (cfg.normals_in_range && cfg.K > 1) {
          // Slab |vᵀz − a| <= r around the innermost direction.
          const Eigen::VectorXd& v = exp_dirs[i].back();
          const double a = v.dot(zf) + 0.5 * rng.normal();
          const double r2 = std::pow(v.dot(zf) - a, 2) + cfg.margin + rng.uniform();
          pl.g[0] = r2 - pow(dot(v) - a, 2);
        } else {
          const Eigen::VectorXd c = zf + 0.5 * rng.normal_vector(n);
          const double r2 = (zf - c).squaredNorm() + cfg.margin + rng.uniform();
          Expression ball(r2);
          for (int j = 0; j < n; ++j) ball = ball - pow(zvar(j) - c[j], 2);
          pl.g[0] = ball;
        }
      }
      break;
    }
  }
  out.z0 = zf;
  if (cfg.perturbation > 0) out.z0 += cfg.perturbation * rng.normal_vector(n);
  return out;
}

std::vector<SizeRow> size_table(long long n, long long m_eq, long long m_ineq,
                                const std::vector<int>& Ks, int N) {
  std::vector<SizeRow> rows;
  for (int K : Ks) {
    SizeCount r = count_reduced(n, m_eq, m_ineq, K);
    SizeCount c = count_complete(n, m_eq, m_ineq, K);
    for (SizeCount* s : {&r, &c}) {
      s->variables *= N;
      s->f_rows *= N;
      s->g_rows *= N;
    }
    rows.push_back({K, r, c});
  }
  return rows;
}

namespace {

json sizes_json(const SizeCount& s) {
  return {{"variables", s.variables}, {"f_rows", s.f_rows}, {"g_rows", s.g_rows},
          {"system", s.system()}};
}

}  // namespace

json to_json(const std::vector<SizeRow>& table) {
  json rows = json::array();
  for (const auto& r : table) {
    rows.push_back({{"K", r.K}, {"reduced", sizes_json(r.reduced)}, {"complete", sizes_json(r.complete)}});
  }
  return rows;
}

TrimmedStats trimmed_stats(std::vector<double> values, double fraction) {
  TrimmedStats s;
  std::sort(values.begin(), values.end());
  const std::size_t cut = static_cast<std::size_t>(std::floor(fraction * values.size()));
  if (values.size() <= 2 * cut) return s;
  const auto first = values.begin() + cut;
  const auto last = values.end() - cut;
  s.kept = static_cast<int>(last - first);
  double sum = 0;
  for (auto it = first; it != last; ++it) sum += *it;
  s.mean = sum / s.kept;
  if (s.kept > 1) {
    double ss = 0;
    for (auto it = first; it != last; ++it) ss += (*it - s.mean) * (*it - s.mean);
    s.stddev = std::sqrt(ss / (s.kept - 1));
  }
  return s;
}

namespace {

bool converged(const SolveReport& r) {
  return r.status == SolveStatus::kConverged && r.all_blocks_converged;
}

InstanceRecord run_instance(const GeneratorConfig& base, int index, const SolverOptions& opts,
                            long long cap, bool direct) {
  GeneratorConfig cfg = base;
  cfg.seed = stream_seed(base.seed, static_cast<std::uint64_t>(index));
  InstanceRecord rec;
  rec.seed_index = index;
  rec.K = cfg.K;
  GeneratedInstance inst;
  try {
    inst = gen_instance(cfg);
  } catch (const GenerationError&) {
    rec.status = "generation-failed";
    return rec;
  }
  rec.reduced = count_reduced(inst.problem);
  rec.complete = count_complete(inst.problem);

  Eigen::VectorXd z_red, z_com;
  bool red_ok = false, com_ok = false, skipped = false;
  try {
    SolveReport r = solve(inst.problem, inst.z0, opts);
    rec.time_s = r.wall_time_s;
    red_ok = converged(r);
    z_red = r.candidate.z;
  } catch (const std::exception&) {
  }
  try {
    SolveReport r = solve_complete(inst.problem, inst.z0, opts, cap);
    rec.time_complete_s = r.wall_time_s;
    com_ok = converged(r);
    z_com = r.candidate.z;
  } catch (const ComplexityError&) {
    skipped = true;
  } catch (const std::exception&) {
  }
  if (red_ok && com_ok) rec.z_distance = (z_red - z_com).norm();

  if (direct && inst.quadratic && !inst.quadratic->has_inequalities()) {
    try {
      const QuadraticRecursion recn = build_recursion(*inst.quadratic);
      const LinearSolution a = solve_linear(recn, SystemKind::kReduced);
      const LinearSolution b = solve_linear(recn, SystemKind::kComplete);
      rec.direct_distance = (a.z - b.z).norm() / std::max(1.0, b.z.norm());
    } catch (const std::exception&) {
    }
  }

  if (!red_ok) {
    rec.status = "reduced-failed";
  } else if (skipped) {
    rec.status = "complete-skipped";
  } else if (!com_ok) {
    rec.status = "complete-failed";
  } else {
    rec.status = "ok";
  }
  return rec;
}

// Records are written by index, so the result does not depend on scheduling.
template <typename Job>
void run_parallel(int count, int threads, Job job) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) job(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

ExperimentResult run_equivalence_mc(const GeneratorConfig& cfg, int count,
                                    const SolverOptions& opts, long long cap, int threads) {
  cfg.check();
  opts.check();
  ExperimentResult out;
  out.config = cfg;
  out.records.resize(std::max(0, count));
  run_parallel(count, threads, [&](int i) { out.records[i] = run_instance(cfg, i, opts, cap, true); });
  return out;
}

ExperimentResult run_scaling(const GeneratorConfig& cfg, const std::vector<int>& Ks, int count,
                             const SolverOptions& opts, long long cap, int threads) {
  cfg.check();
  opts.check();
  ExperimentResult out;
  out.config = cfg;
  const int per = std::max(0, count);
  out.records.resize(Ks.size() * per);
  run_parallel(static_cast<int>(out.records.size()), threads, [&](int j) {
    GeneratorConfig c = cfg;
    c.K = Ks[j / per];
    out.records[j] = run_instance(c, j % per, opts, cap, false);
  });
  return out;
}

json to_json(const ExperimentResult& r) {
  json records = json::array();
  std::vector<int> Ks;
  for (const auto& rec : r.records) {
    json j = {{"seed_index", rec.seed_index},
              {"K", rec.K},
              {"sizes", {{"reduced", sizes_json(rec.reduced)}, {"complete", sizes_json(rec.complete)}}},
              {"status", rec.status},
              {"z_distance", rec.z_distance < 0 ? json(nullptr) : json(rec.z_distance)},
              {"time_s", rec.time_s},
              {"time_complete_s", rec.time_complete_s}};
    if (rec.direct_distance >= 0) j["direct_distance"] = rec.direct_distance;
    records.push_back(std::move(j));
    if (std::find(Ks.begin(), Ks.end(), rec.K) == Ks.end()) Ks.push_back(rec.K);
  }
  json by_k = json::array();
  for (int K : Ks) {
    std::vector<double> red, com;
    for (const auto& rec : r.records) {
      if (rec.K != K) continue;
      if (rec.status != "reduced-failed" && rec.status != "generation-failed") red.push_back(rec.time_s);
      if (rec.status == "ok") com.push_back(rec.time_complete_s);
    }
    const TrimmedStats a = trimmed_stats(red), b = trimmed_stats(com);
    by_k.push_back({{"K", K},
                    {"trimmed_mean_s", a.mean},
                    {"trimmed_std_s", a.stddev},
                    {"complete_trimmed_mean_s", b.mean},
                    {"complete_trimmed_std_s", b.stddev},
                    {"complete_runs", b.kept}});
  }
  json summary = by_k.size() == 1 ? by_k[0] : json{{"by_K", by_k}};
  if (by_k.empty()) summary = {{"trimmed_mean_s", 0.0}, {"trimmed_std_s", 0.0}};
  return {{"config", to_json(r.config)}, {"records", records}, {"summary", summary}};
}

}  // namespace goop
