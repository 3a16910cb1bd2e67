#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "esb/kkt_oracles.hpp"
#include "esb/qp.hpp"

using namespace esb;

namespace {

double objective(const QpProblem& p, const Vec& z) {
  return 0.5 * z.dot(p.H * z) + p.c.dot(z);
}

// Brute force: enumerate every candidate active subset, solve the
// equality-constrained KKT system, keep the best primal-dual feasible point.
double brute_force_optimum(const QpProblem& p, bool* feasible) {
  const int n = static_cast<int>(p.H.rows());
  const int m = static_cast<int>(p.A.rows());
  double best = std::numeric_limits<double>::infinity();
  *feasible = false;

  for (int mask = 0; mask < (1 << m); ++mask) {
    std::vector<int> W;
    for (int i = 0; i < m; ++i)
      if (mask & (1 << i)) W.push_back(i);
    if (static_cast<int>(W.size()) > n) continue;

    const int k = static_cast<int>(W.size());
    Mat KKT = Mat::Zero(n + k, n + k);
    KKT.topLeftCorner(n, n) = p.H;
    Vec rhs(n + k);
    rhs.head(n) = -p.c;
    for (int r = 0; r < k; ++r) {
      KKT.block(0, n + r, n, 1) = -p.A.row(W[r]).transpose();
      KKT.block(n + r, 0, 1, n) = p.A.row(W[r]);
      rhs(n + r) = p.b(W[r]);
    }
    Eigen::FullPivLU<Mat> lu(KKT);
    if (!lu.isInvertible()) continue;
    const Vec sol = lu.solve(rhs);
    const Vec z = sol.head(n);
    const Vec lambda = sol.tail(k);
    if (((p.A * z - p.b).array() < -1e-9).any()) continue;
    if ((lambda.array() < -1e-9).any()) continue;
    *feasible = true;
    best = std::min(best, objective(p, z));
  }
  return best;
}

QpProblem random_qp(std::mt19937& rng, int n, int m) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  QpProblem p;
  Mat R = Mat::NullaryExpr(
      n, n, [&](Eigen::Index, Eigen::Index) { return dist(rng); });
  p.H = R * R.transpose() + 0.5 * Mat::Identity(n, n);
  p.c = Vec::NullaryExpr(n, [&](Eigen::Index) { return dist(rng); });
  p.A = Mat::NullaryExpr(
      m, n, [&](Eigen::Index, Eigen::Index) { return dist(rng); });
  p.b = Vec::NullaryExpr(m, [&](Eigen::Index) { return dist(rng); });
  return p;
}

}  // namespace

TEST_CASE("one-dimensional analytic KKT") {
  QpProblem p;
  p.H = 2.0 * Mat::Identity(1, 1);  // min u^2
  p.c = Vec::Zero(1);
  p.A = Mat::Identity(1, 1);        // u >= 1
  p.b = Vec::Constant(1, 1.0);
  const auto sol = solve_qp(p);
  REQUIRE(sol.status == QpStatus::Optimal);
  CHECK(sol.z_star(0) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(sol.multipliers(0) == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(sol.active_set == std::vector<int>{0});
}

TEST_CASE("unconstrained minimum") {
  QpProblem p;
  p.H = 2.0 * Mat::Identity(2, 2);
  p.c = Vec::Zero(2);
  p.A = Mat(0, 2);
  p.b = Vec(0);
  const auto sol = solve_qp(p);
  REQUIRE(sol.status == QpStatus::Optimal);
  CHECK(sol.z_star.norm() < 1e-14);
  CHECK(sol.active_set.empty());
}

TEST_CASE("infeasible hard constraints are reported") {
  QpProblem p;
  p.H = Mat::Identity(1, 1);
  p.c = Vec::Zero(1);
  p.A = Mat(2, 1);
  p.A << 1.0, -1.0;  // u >= 1 and -u >= 1
  p.b = Vec::Constant(2, 1.0);
  const auto sol = solve_qp(p);
  CHECK(sol.status == QpStatus::Infeasible);
}

TEST_CASE("random instances match the active-set-enumeration oracle") {
  std::mt19937 rng(42);
  int solved = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = random_qp(rng, 4, 6);
    bool oracle_feasible = false;
    const double oracle = brute_force_optimum(p, &oracle_feasible);
    const auto sol = solve_qp(p);
    if (!oracle_feasible) {
      CHECK(sol.status == QpStatus::Infeasible);
      continue;
    }
    REQUIRE(sol.status == QpStatus::Optimal);
    CHECK(objective(p, sol.z_star) == doctest::Approx(oracle).epsilon(1e-6));
    ++solved;
  }
  CHECK(solved > 100);
}

TEST_CASE("KKT residuals and multiplier signs at optimality") {
  std::mt19937 rng(43);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = random_qp(rng, 5, 8);
    const auto sol = solve_qp(p);
    if (sol.status != QpStatus::Optimal) continue;
    CHECK(sol.kkt_residuals.stationarity < 1e-7);
    CHECK(sol.kkt_residuals.primal < 1e-8);
    CHECK(sol.multipliers.minCoeff() > -1e-9);
    CHECK(sol.kkt_residuals.complementarity < 1e-7);
  }
}

TEST_CASE("solver is deterministic") {
  std::mt19937 rng(44);
  const auto p = random_qp(rng, 4, 6);
  const auto a = solve_qp(p);
  const auto b = solve_qp(p);
  CHECK(a.status == b.status);
  CHECK((a.z_star - b.z_star).norm() == 0.0);
  CHECK(a.active_set == b.active_set);
}

TEST_CASE("non-PD cost is rejected") {
  QpProblem p;
  p.H = -Mat::Identity(2, 2);
  p.c = Vec::Zero(2);
  p.A = Mat(0, 2);
  p.b = Vec(0);
  CHECK_THROWS_AS(solve_qp(p), std::invalid_argument);
}

TEST_CASE("unprioritized closed form") {
  Mat G(1, 3);
  G << 1.0, 0.0, 0.0;
  Vec gamma(1);
  gamma << -0.5;
  const auto kkt = analytic_unprioritized_solution(G, gamma, 1.0);
  CHECK(kkt.delta(0) == doctest::Approx(-0.25).epsilon(1e-12));
  CHECK(kkt.qdot(0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(kkt.qdot.tail(2).norm() == 0.0);
}

TEST_CASE("unprioritized oracle equals the QP on random instances") {
  std::mt19937 rng(45);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::uniform_int_distribution<int> nd(1, 5), md(1, 4);
  const double l = 1e2;

  for (int trial = 0; trial < 100; ++trial) {
    const int n = nd(rng), m = md(rng);
    Mat G = Mat::NullaryExpr(
        m, n, [&](Eigen::Index, Eigen::Index) { return dist(rng); });
    Vec gamma = Vec::NullaryExpr(m, [&](Eigen::Index) { return dist(rng); });
    // Keep every task constraint active so the closed form applies: use
    // strictly negative gamma (violated barrier pushes the row to equality).
    gamma = -gamma.cwiseAbs() - Vec::Constant(m, 0.1);

    QpProblem p;
    p.H = Mat::Zero(n + m, n + m);
    p.H.topLeftCorner(n, n) = 2.0 * Mat::Identity(n, n);
    p.H.bottomRightCorner(m, m) = 2.0 * l * Mat::Identity(m, m);
    p.c = Vec::Zero(n + m);
    p.A = Mat::Zero(m, n + m);
    p.A.leftCols(n) = G;
    p.A.rightCols(m).setIdentity();
    p.b = -gamma;

    const auto sol = solve_qp(p);
    REQUIRE(sol.status == QpStatus::Optimal);
    if (static_cast<int>(sol.active_set.size()) != m) continue;

    const auto kkt = analytic_unprioritized_solution(G, gamma, l);
    CHECK((sol.z_star.head(n) - kkt.qdot).lpNorm<Eigen::Infinity>() < 1e-6);
  }
}

TEST_CASE("prioritized KKT oracle") {
  // Vacuous priority rows reduce to the unprioritized closed form.
  Mat G(2, 3);
  G << 1.0, 0.2, -0.3, 0.0, 1.0, 0.4;
  Vec gamma(2);
  gamma << -0.4, -0.8;
  const double l = 10.0;

  const auto plain = analytic_unprioritized_solution(G, gamma, l);
  const auto pri = prioritized_kkt_oracle(G, gamma, Mat(0, 2), l);
  CHECK((plain.qdot - pri.qdot).lpNorm<Eigen::Infinity>() < 1e-10);

  // With a priority row, the oracle must match the QP whenever the assumed
  // active set equals the solver's.
  std::mt19937 rng(46);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  const double kappa = 1e3;
  int matched = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 3, m = 2;
    Mat Gr = Mat::NullaryExpr(
        m, n, [&](Eigen::Index, Eigen::Index) { return dist(rng); });
    Vec gr = Vec::NullaryExpr(m, [&](Eigen::Index) { return dist(rng); });
    gr = -gr.cwiseAbs() - Vec::Constant(m, 0.2);
    Mat K(1, 2);
    K << 1.0, -1.0 / kappa;

    QpProblem p;
    p.H = Mat::Zero(n + m, n + m);
    p.H.topLeftCorner(n, n) = 2.0 * Mat::Identity(n, n);
    p.H.bottomRightCorner(m, m) = 2.0 * l * Mat::Identity(m, m);
    p.c = Vec::Zero(n + m);
    p.A = Mat::Zero(m + 1, n + m);
    p.A.topLeftCorner(m, n) = Gr;
    p.A.block(0, n, m, m).setIdentity();
    p.A.bottomRightCorner(1, m) = -K;
    p.b = Vec::Zero(m + 1);
    p.b.head(m) = -gr;

    const auto sol = solve_qp(p);
    REQUIRE(sol.status == QpStatus::Optimal);
    // Oracle assumes all task rows and the priority row active.
    if (sol.active_set != std::vector<int>{0, 1, 2}) continue;

    const auto oracle = prioritized_kkt_oracle(Gr, gr, K, l);
    CHECK((sol.z_star.head(n) - oracle.qdot).lpNorm<Eigen::Infinity>() < 1e-5);
    ++matched;
  }
  CHECK(matched > 10);
}

TEST_CASE("prioritized oracle flags singular rank-loss systems") {
  // Aligned gradients with a priority row scaled to cancel them produce a
  // singular KKT matrix.
  Mat G(2, 2);
  G << 1.0, 0.0, 1.0, 0.0;
  Vec gamma(2);
  gamma << -0.5, -0.5;
  Mat K(1, 2);
  K << 0.0, 0.0;  // degenerate priority row
  CHECK_THROWS_AS(prioritized_kkt_oracle(G, gamma, K, 1.0),
                  std::runtime_error);
}
