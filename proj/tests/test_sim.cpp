#include <cmath>
#include <random>

#include "doctest.h"
#include "esb/scenario_json.hpp"
#include "esb/sim.hpp"

using namespace esb;

TEST_CASE("kinematic stepping") {
  const auto chain = LinkChain::uniform(3, 0.5);
  const Vec q = Vec::Constant(3, 0.2);
  CHECK((step_kinematic(chain, q, Vec::Zero(3), 0.01) - q).norm() == 0.0);
  const Vec u = Vec::Constant(3, 2.0);
  const Vec qn = step_kinematic(chain, q, u, 0.01);
  CHECK((qn - (q + 0.01 * u)).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("velocity tracking torque law") {
  RobotState s{Vec::Constant(2, 0.4), Vec::Constant(2, 0.1)};
  // Tracking the current state exactly produces zero torque.
  CHECK(velocity_tracking_torque(s.qdot, s.q, s, 100.0, 36.0).norm() == 0.0);
  // Unit velocity error with k_u = 100 gives 100 per joint.
  const Vec tau = velocity_tracking_torque(s.qdot + Vec::Ones(2), s.q, s,
                                           100.0, 36.0);
  CHECK(tau(0) == doctest::Approx(100.0));
  CHECK(tau(1) == doctest::Approx(100.0));
}

TEST_CASE("active-set diagnostics") {
  Mat K(1, 2);
  K << 1.0, -1e-3;
  Vec gamma(2);
  gamma << -0.3, -0.5;

  QpSolution all;
  all.active_set = {0, 1};
  const auto d1 = active_set_diagnostics(all, K, gamma);
  CHECK(d1.Sigma.isIdentity(0.0));
  CHECK((d1.z - K * gamma).lpNorm<Eigen::Infinity>() < 1e-15);

  QpSolution none;
  none.active_set = {};
  const auto d2 = active_set_diagnostics(none, K, gamma);
  CHECK(d2.Sigma.cols() == 0);
  CHECK(d2.z.norm() == 0.0);

  // Sigma entries in {0,1}, one per column.
  QpSolution partial;
  partial.active_set = {1};
  const auto d3 = active_set_diagnostics(partial, K, gamma);
  REQUIRE(d3.Sigma.cols() == 1);
  CHECK(d3.Sigma.col(0).sum() == 1.0);
  CHECK(d3.K_bar(0, 0) == doctest::Approx(-1e-3));
}

TEST_CASE("rank monitor") {
  Mat K(1, 2);
  K << 1.0, -1e-3;
  Mat Sigma = Mat::Identity(2, 2);

  Mat grad_full(2, 2);
  grad_full << 1.0, 0.0, 0.0, 1.0;
  const auto ok = rank_monitor(K, Sigma, grad_full, 5e-3);
  CHECK(ok.rank == 1);
  CHECK(!ok.drop);

  // Cancelling rows: K_bar Sigma' grad ~ 0 -> rank 0 < |I|-1.
  Mat grad_cancel(2, 2);
  grad_cancel << 1.0, 0.0, 1e3, 0.0;
  const auto bad = rank_monitor(K, Sigma, grad_cancel, 5e-3);
  CHECK(bad.rank == 0);
  CHECK(bad.drop);

  // Full-rank random case never drops.
  std::mt19937 rng(61);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Mat K2(2, 3);
  Mat grad3 = Mat::NullaryExpr(
      3, 4, [&](Eigen::Index, Eigen::Index) { return dist(rng); });
  K2 << 1.0, -1e-3, 0.0, 0.0, 1.0, -1e-3;
  const auto full = rank_monitor(K2, Mat::Identity(3, 3), grad3, 5e-3);
  CHECK(full.rank == 2);
  CHECK(!full.drop);
}

TEST_CASE("continuity checker") {
  std::vector<Vec> constant(10, Vec::Constant(2, 1.0));
  const auto c = continuity_checker(constant, 0.1);
  CHECK(c.max_jump == 0.0);
  CHECK(c.pass);

  std::vector<Vec> step = constant;
  step[5] = Vec::Constant(2, 3.5);
  const auto s = continuity_checker(step, 0.1);
  CHECK(s.max_jump == doctest::Approx(2.5));
  CHECK(!s.pass);
}

TEST_CASE("baseline Jacobian controllers") {
  const auto chain = LinkChain::uniform(3, 0.5);
  Vec target(2);
  target << 0.5, 1.0;
  std::vector<EsbTask> tasks = {
      goal_point_task("t1", FrameSelector::link_point(3), target,
                      ClassKFunction::linear(1.0))};

  // Zero task error means zero command in both modes.
  Vec q(3);
  q << M_PI / 2, -M_PI / 2, M_PI / 2;
  CHECK(jacobian_baseline_controllers(tasks, chain, q,
                                      BaselineMode::Superposition)
            .norm() < 1e-12);
  CHECK(jacobian_baseline_controllers(tasks, chain, q, BaselineMode::NullSpace)
            .norm() < 1e-12);
}

TEST_CASE("P = J Jbar is identity for orthogonal tasks and PSD in general") {
  // Disjoint-support joint tasks: stacked Jacobian is a permutation of I.
  const auto chain = LinkChain::uniform(4, 0.5);
  std::vector<Mat> Js = {Mat::Zero(1, 4), Mat::Zero(1, 4)};
  Js[0](0, 0) = 1.0;
  Js[1](0, 2) = 1.0;
  Mat stacked(2, 4);
  stacked << Js[0], Js[1];
  Mat Jbar(4, 2);
  Jbar.col(0) = detail::pseudo_inverse(Js[0]);
  Jbar.col(1) = detail::pseudo_inverse(Js[1]);
  const Mat P = stacked * Jbar;
  CHECK((P - Mat::Identity(2, 2)).lpNorm<Eigen::Infinity>() < 1e-9);

  // Random link-point tasks: the minimum-norm reconstruction P = J J^+ of
  // the stacked Jacobian is symmetric PSD (the per-task pseudoinverse
  // stack only coincides with it when the tasks are orthogonal).
  std::mt19937 rng(62);
  std::uniform_real_distribution<double> dist(-M_PI, M_PI);
  for (int trial = 0; trial < 50; ++trial) {
    Vec q = Vec::NullaryExpr(4, [&](Eigen::Index) { return dist(rng); });
    const Mat J1 = task_jacobian(chain, q, FrameSelector::link_point(4));
    const Mat J2 = task_jacobian(chain, q, FrameSelector::link_point(3));
    const Mat J3 = task_jacobian(chain, q, FrameSelector::link_point(2));
    Mat big(6, 4);
    big << J1, J2, J3;
    const Mat P2 = big * detail::pseudo_inverse(big);
    CHECK((P2 * P2 - P2).lpNorm<Eigen::Infinity>() < 1e-9);
    CHECK((P2 - P2.transpose()).lpNorm<Eigen::Infinity>() < 1e-9);
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (P2 + P2.transpose()));
    CHECK(es.eigenvalues().minCoeff() >= -1e-9);
  }
}

TEST_CASE("zero-task scenario leaves the robot at rest") {
  Scenario sc;
  sc.chain = LinkChain::uniform(2, 0.5);
  sc.timeline.push_back({100, StackSpec{{{"unused"}}, 1e3, StackMode::Fixed}});
  sc.initial_state = {Vec::Constant(2, 0.3), Vec::Zero(2)};
  const auto trace = run_scenario(sc);
  REQUIRE(trace.size() == 100);
  for (const auto& rec : trace) {
    CHECK(rec.u.norm() == 0.0);
    CHECK((rec.q - sc.initial_state.q).norm() == 0.0);
  }
}

TEST_CASE("scenario runs are deterministic") {
  const auto sc = compile_scenario(builtin_scenario("sim1_independent"));
  Scenario small = sc;
  small.timeline[0].until_iteration = 300;
  const auto a = run_scenario(small);
  const auto b = run_scenario(small);
  REQUIRE(a.size() == b.size());
  for (size_t k = 0; k < a.size(); ++k) {
    CHECK((a[k].q - b[k].q).norm() == 0.0);
    CHECK((a[k].u - b[k].u).norm() == 0.0);
    CHECK(a[k].V_z == b[k].V_z);
    CHECK(a[k].rank_value == b[k].rank_value);
  }
}

TEST_CASE("independent-goal closed loop: h converges, V_gamma monotone") {
  const auto sc = compile_scenario(builtin_scenario("sim1_independent"));
  const auto trace = run_scenario(sc);
  REQUIRE(!trace.empty());
  const auto& last = trace.back();
  for (int i = 0; i < last.h.size(); ++i) CHECK(std::abs(last.h(i)) < 1e-2);
  for (size_t k = 1; k < trace.size(); ++k)
    CHECK(trace[k].V_gamma <= trace[k - 1].V_gamma + 1e-6);
}

TEST_CASE("dependent goals: only the top task converges") {
  const auto sc = compile_scenario(builtin_scenario("sim2_dependent"));
  const auto trace = run_scenario(sc);
  const auto& last = trace.back();
  CHECK(std::abs(last.h(0)) < 1e-2);
  CHECK(std::abs(last.h(1)) > 0.05);
  CHECK(std::abs(last.h(2)) > 0.05);
  CHECK(last.v.squaredNorm() > 1e-4);
}

TEST_CASE("safety invariance of joint limits under adversarial goals") {
  std::mt19937 rng(63);
  std::uniform_real_distribution<double> qdist(-0.8, 0.8);
  std::uniform_real_distribution<double> tdist(-2.0, 2.0);

  for (int trial = 0; trial < 20; ++trial) {
    Scenario sc;
    sc.chain = LinkChain::uniform(3, 0.5);
    Vec qp_lim(3), qm_lim(3);
    qp_lim << M_PI, 2 * M_PI / 3, 2 * M_PI / 3;
    qm_lim = -qp_lim;
    Vec target(2);
    target << tdist(rng), tdist(rng);
    sc.tasks.push_back(goal_point_task("goal", FrameSelector::link_point(3),
                                       target, ClassKFunction::linear(1.0)));
    for (auto& lim :
         joint_limit_tasks(qp_lim, qm_lim, ClassKFunction::linear(1.0)))
      sc.tasks.push_back(std::move(lim));
    sc.timeline.push_back({600, StackSpec{{{"goal"}}, 1e3, StackMode::Fixed}});
    sc.initial_state = {
        Vec::NullaryExpr(3, [&](Eigen::Index) { return qdist(rng); }),
        Vec::Zero(3)};
    const auto trace = run_scenario(sc);
    double hmin = 1e9;
    for (const auto& rec : trace)
      hmin = std::min(hmin, rec.h.tail(6).minCoeff());
    CHECK(hmin >= -1e-6);
  }
}

TEST_CASE("switched input is continuous across stack changes") {
  auto doc = builtin_scenario("sim3_switching");
  // Shorten for test runtime while keeping both switches.
  doc.timeline[0].until_iteration = 700;
  doc.timeline[1].until_iteration = 1400;
  doc.timeline[2].until_iteration = 2100;
  const auto sc = compile_scenario(doc);
  const auto trace = run_scenario(sc);
  const auto summary = summarize_trace(sc, trace);
  for (const auto& c : summary.at("continuity"))
    CHECK(c.at("pass").get<bool>());
}

TEST_CASE("V_z decreases outside active-set changes and ends small") {
  const auto sc = compile_scenario(builtin_scenario("sim1_independent"));
  const auto trace = run_scenario(sc);
  int violations = 0;
  for (size_t k = 1; k < trace.size(); ++k) {
    if (trace[k].active_set != trace[k - 1].active_set) continue;
    if (trace[k].V_z > trace[k - 1].V_z + 1e-6) ++violations;
  }
  CHECK(violations == 0);
  CHECK(trace.back().V_z < 1e-4);
}
