#include <random>
#include <sstream>

#include "doctest.h"
#include "goop/kkt.hpp"
#include "goop/model.hpp"
#include "test_support.hpp"

using namespace goop;
using namespace goop::testing;

namespace {

QuadraticPlayer small_player(int n_total, int n_own, int K) {
  QuadraticPlayer pl;
  pl.n = n_own;
  for (int k = 0; k < K; ++k) {
    pl.Q.push_back(Eigen::MatrixXd::Identity(n_total, n_total));
    pl.q.push_back(Eigen::VectorXd::Zero(n_total));
  }
  pl.H = Eigen::MatrixXd::Zero(1, n_total);
  pl.H(0, 0) = 1;
  pl.h = Eigen::VectorXd::Zero(1);
  return pl;
}

QuadraticGoop random_game(std::mt19937_64& rng, std::vector<int> levels) {
  QuadraticGoop p;
  const int N = static_cast<int>(levels.size()), n_each = 2, n = N * n_each;
  for (int i = 0; i < N; ++i) {
    QuadraticPlayer pl;
    pl.n = n_each;
    for (int k = 0; k < levels[i]; ++k) {
      Eigen::MatrixXd a = random_matrix(rng, n, 2);
      pl.Q.push_back(a * a.transpose());
      pl.q.push_back(pl.Q.back() * random_vector(rng, n));
    }
    pl.H = random_matrix(rng, 1, n);
    pl.h = random_vector(rng, 1);
    pl.G = random_matrix(rng, 1, n);
    pl.g = random_vector(rng, 1);
    p.players.push_back(pl);
  }
  return p;
}

Eigen::VectorXd values(const std::vector<Expression>& es, const VariableSpace& s, const Eigen::VectorXd& z) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(es.size()));
  for (std::size_t j = 0; j < es.size(); ++j) v[static_cast<Eigen::Index>(j)] = evaluate(es[j], s, z);
  return v;
}

}  // namespace

TEST_CASE("validate: PSD and rank checks on quadratic games") {
  QuadraticGoop p;
  p.players.push_back(small_player(2, 2, 1));
  CHECK(validate(p).ok());
  CHECK_FALSE(validate(p).assumed.empty());

  p.players[0].Q[0](1, 1) = -1.0;
  ValidationReport r = validate(p);
  CHECK_FALSE(r.ok());
  CHECK(r.warnings.front().find("positive semidefinite") != std::string::npos);

  // Cross-player blocks are not required to be PSD.
  QuadraticGoop two;
  two.players = {small_player(4, 2, 1), small_player(4, 2, 1)};
  two.players[1].H.setZero();
  two.players[1].H(0, 2) = 1;
  two.players[0].Q[0](2, 2) = -5;
  CHECK(validate(two).ok());

  // Equal own blocks make the stacked own-block matrix rank deficient.
  two.players[1].H(0, 2) = 0;
  two.players[1].H(0, 3) = 0;
  CHECK_FALSE(validate(two).ok());
}

TEST_CASE("validate: structural errors are hard errors and validation is pure") {
  QuadraticGoop p;
  p.players.push_back(small_player(2, 2, 1));
  p.players[0].Q[0](0, 1) = 1.0;
  CHECK_THROWS_AS(validate(p), ModelError);

  p.players[0].Q[0](0, 1) = 0.0;
  p.players[0].h = Eigen::VectorXd::Zero(2);
  CHECK_THROWS_AS(validate(p), ModelError);

  CHECK_THROWS_AS(validate(GoopProblem{}), ModelError);

  GoopProblem t1 = t1_problem();
  ValidationReport a = validate(t1), b = validate(t1);
  CHECK(a.warnings == b.warnings);
  CHECK(a.assumed == b.assumed);
}

TEST_CASE("validate flags players without constraints") {
  GoopProblem p;
  PlayerSpec s;
  s.n = 1;
  s.objectives = {pow(z(0), 2)};
  p.players = {s};
  CHECK_FALSE(validate(p).ok());
}

TEST_CASE("pad_levels") {
  std::mt19937_64 rng(21);
  QuadraticGoop p = random_game(rng, {2, 2});
  QuadraticGoop same = pad_levels(p, 2);
  for (int i = 0; i < 2; ++i) {
    for (int k = 0; k < 2; ++k) CHECK(same.players[i].Q[k] == p.players[i].Q[k]);
  }

  QuadraticGoop mixed = random_game(rng, {1, 2});
  QuadraticGoop padded = pad_levels(mixed, 2);
  CHECK(padded.players[0].levels() == 2);
  CHECK(padded.players[0].Q[0] == mixed.players[0].Q[0]);
  CHECK(padded.players[0].Q[1].isZero());
  CHECK(padded.players[0].q[1].isZero());
  CHECK(validate(padded).warnings == validate(mixed).warnings);
  CHECK_THROWS_AS(pad_levels(mixed, 1), std::invalid_argument);
}

TEST_CASE("padded reduced residual vanishes at the original solution with zero padded duals") {
  // One level of x² with x = 1 enforced by an equality; padding adds an
  // empty inner level.
  QuadraticGoop p;
  QuadraticPlayer pl;
  pl.n = 1;
  pl.Q = {Eigen::MatrixXd::Identity(1, 1)};
  pl.q = {Eigen::VectorXd::Zero(1)};
  pl.H = Eigen::MatrixXd::Ones(1, 1);
  pl.h = Eigen::VectorXd::Ones(1);
  p.players = {pl};

  KktSystem base = assemble_reduced(lift_quadratic(p));
  Candidate c;
  c.z = Eigen::VectorXd::Ones(1);
  c.players = {{LevelDuals{{}, {}, Eigen::VectorXd::Ones(1), Eigen::VectorXd(0), {}}}};
  CHECK(base.F(base.pack(c)).lpNorm<Eigen::Infinity>() <= 1e-12);

  KktSystem padded = assemble_reduced(lift_quadratic(pad_levels(p, 2)));
  Candidate cp;
  cp.z = c.z;
  // Level 1 keeps the multiplier; level 2 (padded) has zero objective, so zero duals.
  LevelDuals outer{Eigen::VectorXd::Zero(1), Eigen::VectorXd(0), Eigen::VectorXd::Ones(1), Eigen::VectorXd(0), {}};
  LevelDuals inner{Eigen::VectorXd(0), Eigen::VectorXd(0), Eigen::VectorXd::Zero(1), Eigen::VectorXd(0), {}};
  cp.players = {{outer, inner}};
  CHECK(padded.F(padded.pack(cp)).lpNorm<Eigen::Infinity>() <= 1e-10);
}

TEST_CASE("lift_quadratic matches matrix arithmetic") {
  std::mt19937_64 rng(22);
  QuadraticGoop p = random_game(rng, {2, 2});
  GoopProblem g = lift_quadratic(p);
  const VariableSpace space = g.primal_space();
  for (int t = 0; t < 10; ++t) {
    Eigen::VectorXd zz = random_vector(rng, 4);
    for (int i = 0; i < 2; ++i) {
      const auto& q = p.players[i];
      for (int k = 0; k < 2; ++k) {
        const double expect = 0.5 * zz.dot(q.Q[k] * zz) + q.q[k].dot(zz);
        CHECK(evaluate(g.players[i].objectives[k], space, zz) == doctest::Approx(expect).epsilon(1e-10));
        auto grad = gradient(g.players[i].objectives[k], kPrimalBlock, space);
        Eigen::VectorXd expect_grad = q.Q[k] * zz + q.q[k];
        CHECK((values(grad, space, zz) - expect_grad).norm() <= 1e-10 * (1 + expect_grad.norm()));
      }
      CHECK((values(g.players[i].h, space, zz) - (q.H * zz - q.h)).norm() <= 1e-10);
      CHECK((values(g.players[i].g, space, zz) - (q.G * zz - q.g)).norm() <= 1e-10);
    }
  }

  QuadraticGoop zero;
  QuadraticPlayer pl = small_player(2, 2, 1);
  pl.Q[0].setZero();
  zero.players = {pl};
  GoopProblem gz = lift_quadratic(zero);
  CHECK(evaluate(gz.players[0].objectives[0], gz.primal_space(), Eigen::VectorXd::Ones(2)) == 0.0);
}

TEST_CASE("property: lifting commutes with padding") {
  std::mt19937_64 rng(23);
  for (int t = 0; t < 10; ++t) {
    QuadraticGoop p = random_game(rng, {1 + t % 2, 2, 1});
    GoopProblem a = lift_quadratic(pad_levels(p, 3));
    GoopProblem b = pad_levels(lift_quadratic(p), 3);
    const VariableSpace space = a.primal_space();
    for (int s = 0; s < 5; ++s) {
      Eigen::VectorXd zz = random_vector(rng, 6);
      for (int i = 0; i < 3; ++i) {
        for (int k = 0; k < 3; ++k) {
          CHECK(evaluate(a.players[i].objectives[k], space, zz) ==
                doctest::Approx(evaluate(b.players[i].objectives[k], space, zz)).epsilon(1e-12));
        }
        CHECK((values(a.players[i].g, space, zz) - values(b.players[i].g, space, zz)).norm() <= 1e-12);
        CHECK((values(a.players[i].h, space, zz) - values(b.players[i].h, space, zz)).norm() <= 1e-12);
      }
    }
  }
}

TEST_CASE("problem and candidate JSON round trip") {
  GoopProblem t1 = t1_problem();
  GoopProblem back = problem_from_json(to_json(t1));
  REQUIRE(back.player_count() == 1);
  const VariableSpace space = t1.primal_space();
  Eigen::VectorXd zz(2);
  zz << 0.3, -1.2;
  for (int k = 0; k < 2; ++k) {
    CHECK(evaluate(back.players[0].objectives[k], space, zz) ==
          doctest::Approx(evaluate(t1.players[0].objectives[k], space, zz)));
  }

  std::mt19937_64 rng(24);
  QuadraticGoop q = random_game(rng, {2, 1});
  QuadraticGoop qb = quadratic_from_json(to_json(q)["quadratic"]);
  CHECK(qb.players[1].Q[0] == q.players[1].Q[0]);
  CHECK(qb.players[0].G == q.players[0].G);
  CHECK(problem_from_json(to_json(q)).player_count() == 2);

  KktSystem sys = assemble_reduced(t1);
  Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(sys.dimension(), -1, 1);
  Candidate c = sys.unpack(y);
  CHECK(sys.pack(candidate_from_json(to_json(c))) == y);

  CHECK_THROWS_AS(problem_from_json(nlohmann::json::object()), ModelError);
}
