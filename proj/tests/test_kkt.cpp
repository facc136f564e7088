#include <cmath>
#include <random>

#include "doctest.h"
#include "goop/kkt.hpp"
#include "goop/linalg.hpp"
#include "test_support.hpp"

using namespace goop;
using namespace goop::testing;

namespace {

// Random equality-constrained quadratic game with PSD own blocks.
QuadraticGoop random_quadratic(std::mt19937_64& rng, int N, int n_each, int m_eq, int m_ineq, int K) {
  QuadraticGoop p;
  const int n = N * n_each;
  for (int i = 0; i < N; ++i) {
    QuadraticPlayer pl;
    pl.n = n_each;
    for (int k = 0; k < K; ++k) {
      Eigen::MatrixXd a = random_matrix(rng, n, 2);
      pl.Q.push_back(a * a.transpose());
      pl.q.push_back(pl.Q.back() * random_vector(rng, n));
    }
    pl.H = random_matrix(rng, m_eq, n);
    pl.h = random_vector(rng, m_eq);
    pl.G = random_matrix(rng, m_ineq, n);
    pl.g = random_vector(rng, m_ineq) - 3.0 * Eigen::VectorXd::Ones(m_ineq);
    p.players.push_back(pl);
  }
  return p;
}

Eigen::VectorXd random_point(std::mt19937_64& rng, int dim) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd y(dim);
  for (int j = 0; j < dim; ++j) y[j] = u(rng);
  return y;
}

}  // namespace

TEST_CASE("count formulas reproduce the published size table") {
  const long long red_sys[] = {132, 188, 244, 300, 356};
  const long long red_var[] = {128, 244, 408, 620, 880};
  const long long com_sys[] = {168, 368, 800, 1728, 3712};
  const long long com_var[] = {136, 304, 672, 1472, 3200};
  for (int K = 2; K <= 6; ++K) {
    SizeCount r = count_reduced(10, 3, 2, K);
    SizeCount c = count_complete(10, 3, 2, K);
    CHECK(4 * r.system() == red_sys[K - 2]);
    CHECK(4 * r.variables == red_var[K - 2]);
    CHECK(4 * c.system() == com_sys[K - 2]);
    CHECK(4 * c.variables == com_var[K - 2]);
  }
  CHECK(count_reduced(10, 3, 2, 2) == SizeCount{32, 27, 6});
  CHECK(count_reduced(10, 3, 2, 5) == SizeCount{155, 63, 12});
  CHECK(count_complete(10, 3, 2, 3) == SizeCount{76, 76, 16});
  CHECK(count_complete(10, 3, 2, 6) == SizeCount{800, 800, 128});
  for (int n = 0; n < 4; ++n) {
    CHECK(count_reduced(n, 2, 3, 1) == SizeCount{n + 5, n + 5, 6});
    CHECK(count_complete(n, 2, 3, 1) == count_reduced(n, 2, 3, 1));
  }
}

TEST_CASE("T1 reduced layout and perturbed row count") {
  GoopProblem p = t1_problem();
  KktSystem red = assemble_reduced(p);
  CHECK(red.dimension() == 18);
  CHECK(red.f_rows() == 2 * 2 + 1 + 2 * 4);
  CHECK(red.g_rows() == 3 * 4);

  KktSystem pert = assemble_perturbed(p, 1.0);
  CHECK(pert.f_rows() == 21);
  CHECK(pert.dimension() == 26);
  CHECK(pert.positive_slots().size() == 16);
  CHECK_THROWS_AS(assemble_perturbed(p, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(assemble_perturbed(p, -1.0), std::invalid_argument);
}

TEST_CASE("perturbed slack and complementarity rows vanish at s = g, s*gamma = rho") {
  GoopProblem p = t1_problem();
  const double rho = 0.3;
  KktSystem sys = assemble_perturbed(p, rho);
  Candidate c = sys.unpack(Eigen::VectorXd::Zero(sys.dimension()));
  c.z << 1.0, 1.0;
  Eigen::Vector4d g(4.0, 6.0, 4.0, 6.0);
  for (auto& lv : c.players[0]) {
    lv.s = g;
    lv.gamma = (rho / g.array()).matrix();
  }
  Eigen::VectorXd f = sys.F(sys.pack(c));
  const auto& tags = sys.row_tags();
  for (int r = 0; r < sys.f_rows(); ++r) {
    if (tags[r].kind == RowKind::kSlack || tags[r].kind == RowKind::kComplementarity) {
      CHECK(std::abs(f[r]) <= 1e-15);
    }
  }
}

TEST_CASE("zero duals collapse stationarity rows to objective gradients") {
  GoopProblem p = t1_problem();
  KktSystem sys = assemble_reduced(p);
  std::mt19937_64 rng(3);
  for (int t = 0; t < 5; ++t) {
    Eigen::VectorXd y = Eigen::VectorXd::Zero(sys.dimension());
    y.head(2) = 4.0 * random_point(rng, 2);
    Eigen::VectorXd f = sys.F(y);
    // Level 1 then level 2 stationarity rows.
    CHECK(std::abs(f[0] - 0.0) <= 1e-12);
    CHECK(std::abs(f[1] - 2 * (y[1] - 3)) <= 1e-12);
    CHECK(std::abs(f[2] - 2 * (y[0] - 1)) <= 1e-12);
    CHECK(std::abs(f[3] - 0.0) <= 1e-12);
  }
}

TEST_CASE("assembled dimensions agree with the counters") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> small(0, 2), levels(1, 3), nd(1, 3), players(1, 3);
  for (int trial = 0; trial < 15; ++trial) {
    int N = players(rng);
    QuadraticGoop q;
    int n = 0;
    std::vector<int> dims;
    for (int i = 0; i < N; ++i) dims.push_back(nd(rng)), n += dims.back();
    for (int i = 0; i < N; ++i) {
      QuadraticPlayer pl;
      pl.n = dims[i];
      int K = levels(rng), me = std::min(small(rng), dims[i]), mi = small(rng);
      for (int k = 0; k < K; ++k) {
        Eigen::MatrixXd a = random_matrix(rng, n, 2);
        pl.Q.push_back(a * a.transpose());
        pl.q.push_back(Eigen::VectorXd::Zero(n));
      }
      pl.H = random_matrix(rng, me, n);
      pl.h = Eigen::VectorXd::Zero(me);
      pl.G = random_matrix(rng, mi, n);
      pl.g = Eigen::VectorXd::Zero(mi);
      q.players.push_back(pl);
    }
    GoopProblem p = lift_quadratic(q);
    SizeCount rc = count_reduced(p), cc = count_complete(p);
    KktSystem red = assemble_reduced(p);
    KktSystem com = assemble_complete(p);
    // Counters give dual-plus-own-primal variables per player; the primal block is shared.
    CHECK(red.dimension() == rc.variables);
    CHECK(red.f_rows() == rc.f_rows);
    CHECK(red.g_rows() == rc.g_rows);
    CHECK(com.dimension() == cc.variables);
    CHECK(com.f_rows() == cc.f_rows);
    CHECK(com.g_rows() == cc.g_rows);
  }
}

TEST_CASE("single-level systems: reduced equals complete") {
  std::mt19937_64 rng(8);
  QuadraticGoop q = random_quadratic(rng, 2, 2, 1, 2, 1);
  GoopProblem p = lift_quadratic(q);
  KktSystem red = assemble_reduced(p);
  KktSystem com = assemble_complete(p);
  REQUIRE(red.dimension() == com.dimension());
  REQUIRE(red.f_rows() == com.f_rows());
  for (int t = 0; t < 5; ++t) {
    Eigen::VectorXd y = random_point(rng, red.dimension());
    CHECK((red.F(y) - com.F(y)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((red.G(y) - com.G(y)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("innermost rows coincide between reduced and complete systems") {
  std::mt19937_64 rng(9);
  QuadraticGoop q = random_quadratic(rng, 1, 3, 1, 2, 3);
  GoopProblem p = lift_quadratic(q);
  KktSystem red = assemble_reduced(p);
  KktSystem com = assemble_complete(p);
  // Level-K rows use identically named z, λ_K, γ_K variables in both systems.
  auto level_k_rows = [](const KktSystem& s, int K) {
    std::vector<Expression> out;
    for (int r = 0; r < s.f_rows(); ++r) {
      if (s.row_tags()[r].level == K) out.push_back(s.f_expressions()[r]);
    }
    return out;
  };
  auto a = level_k_rows(red, 3);
  auto b = level_k_rows(com, 3);
  REQUIRE(a.size() == b.size());
  for (std::size_t r = 0; r < a.size(); ++r) CHECK(to_sexpr(a[r]) == to_sexpr(b[r]));
}

TEST_CASE("analytic Jacobians match finite differences") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 6; ++trial) {
    QuadraticGoop q = random_quadratic(rng, 2, 2, 1, 1, 2 + trial % 2);
    GoopProblem p = lift_quadratic(q);
    for (const KktSystem& sys : {assemble_reduced(p), assemble_complete(p),
                                 assemble_perturbed(p, 0.1), assemble_perturbed_complete(p, 0.1)}) {
      Eigen::VectorXd y = random_point(rng, sys.dimension());
      CHECK(jacobian_fd_check(sys, y, 1e-6) <= 1e-7);
    }
  }
}

TEST_CASE("linear constraint rows have constant Jacobian rows") {
  GoopProblem p = t1_problem();
  KktSystem sys = assemble_reduced(p);
  std::mt19937_64 rng(4);
  int eq_row = -1;
  for (int r = 0; r < sys.f_rows(); ++r) {
    if (sys.row_tags()[r].kind == RowKind::kEquality) eq_row = r;
  }
  REQUIRE(eq_row >= 0);
  Eigen::RowVectorXd first = sys.jacobian(random_point(rng, sys.dimension())).row(eq_row);
  for (int t = 0; t < 3; ++t) {
    CHECK(sys.jacobian(random_point(rng, sys.dimension())).row(eq_row) == first);
  }
}

TEST_CASE("complete-system cap is enforced") {
  std::mt19937_64 rng(5);
  QuadraticGoop q = random_quadratic(rng, 1, 2, 1, 1, 3);
  GoopProblem p = lift_quadratic(q);
  CHECK_THROWS_AS(assemble_complete(p, 10), ComplexityError);
  CHECK_NOTHROW(assemble_complete(p));
}

TEST_CASE("lift of a directly solved complete system satisfies the reduced system") {
  std::mt19937_64 rng(77);
  for (int K = 2; K <= 3; ++K) {
    for (int trial = 0; trial < 5; ++trial) {
      QuadraticGoop q = random_quadratic(rng, 2, 3, 1, 0, K);
      GoopProblem p = lift_quadratic(q);
      KktSystem com = assemble_complete(p);
      Eigen::VectorXd y = solve_linear_residual(com, Eigen::VectorXd::Zero(com.dimension()));
      REQUIRE(com.F(y).cwiseAbs().maxCoeff() <= 1e-9);
      Candidate lifted = lift_duals(com, com.unpack(y), 1e-8);
      KktSystem red = assemble_reduced(p);
      Eigen::VectorXd yr = red.pack(lifted);
      CHECK(red.F(yr).cwiseAbs().maxCoeff() <= 1e-8);
      CHECK((yr.head(p.dimension()) - y.head(p.dimension())).norm() == 0.0);
    }
  }
}

TEST_CASE("lift maps zero duals to zero duals and keeps innermost multipliers") {
  GoopProblem p = t1_problem();
  KktSystem com = assemble_complete(p);
  Candidate zero = com.unpack(Eigen::VectorXd::Zero(com.dimension()));
  zero.z << 1.0, 1.0;
  // At z = (1,1) with zero duals the inner stationarity 2(z₁−1) vanishes; the
  // outer row does not, so this only exercises the map, not the precondition.
  CHECK_THROWS_AS(lift_duals(com, zero, 1e-8), PreconditionError);
  Candidate lifted = lift_duals(com, zero, 1e9);
  for (const auto& lv : lifted.players[0]) {
    CHECK(lv.psi.isZero(0));
    CHECK(lv.phi.isZero(0));
    CHECK(lv.lambda.isZero(0));
    CHECK(lv.gamma.isZero(0));
  }

  Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(com.dimension(), 0.1, 3.0);
  Candidate c = com.unpack(y);
  Candidate l = lift_duals(com, c, 1e9);
  CHECK(l.players[0][1].lambda == c.players[0][1].lambda);
  CHECK(l.players[0][1].gamma == c.players[0][1].gamma);
}

TEST_CASE("layout JSON lists every segment") {
  KktSystem sys = assemble_reduced(t1_problem());
  auto j = to_json(sys.layout());
  CHECK(j["dimension"] == 18);
  int total = 0;
  for (const auto& s : j["segments"]) total += s["length"].get<int>();
  CHECK(total == 18);
}
