#pragma once

// Release acceptance suite: end-to-end checks on the built-in scenarios plus
// randomized property checks.  Shared by the standalone acceptance runner and
// the `esbsim verify` command.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "esb/kkt_oracles.hpp"
#include "esb/scenario_json.hpp"
#include "esb/sim.hpp"

namespace esb {

struct CriterionResult {
  int index = 0;
  std::string name;
  bool pass = false;
  std::string detail;
};

namespace detail_acceptance {

inline std::string fmt(double x) {
  std::ostringstream os;
  os.precision(6);
  os << x;
  return os.str();
}

inline int task_index(const Scenario& sc, const std::string& id) {
  for (size_t i = 0; i < sc.tasks.size(); ++i)
    if (sc.tasks[i].id == id) return static_cast<int>(i);
  return -1;
}

inline bool continuity_all_pass(const json& summary, std::string& detail) {
  bool ok = true;
  for (const auto& c : summary.at("continuity")) {
    detail += " boundary " + c.at("boundary_iteration").dump() + ": jump " +
              fmt(c.at("window_max_jump").get<double>()) + " vs 2*p95 " +
              fmt(2.0 * c.at("baseline_p95").get<double>()) + ";";
    ok = ok && c.at("pass").get<bool>();
  }
  return ok;
}

inline double median(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

inline CriterionResult independent_convergence() {
  CriterionResult r{1, "independent goals converge, V_gamma monotone", false,
                    ""};
  const auto t0 = std::chrono::steady_clock::now();
  const auto sc = compile_scenario(builtin_scenario("sim1_independent"));
  const auto trace = run_scenario(sc);
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  const double h_final = trace.back().h.cwiseAbs().maxCoeff();
  double worst_increase = 0.0;
  for (size_t k = 1; k < trace.size(); ++k)
    worst_increase = std::max(worst_increase,
                              trace[k].V_gamma - trace[k - 1].V_gamma);
  r.pass = h_final < 1e-2 && worst_increase <= 1e-6 && elapsed < 10.0;
  r.detail = "max final |h| " + fmt(h_final) + ", worst V_gamma increase " +
             fmt(worst_increase) + ", runtime " + fmt(elapsed) + " s";
  return r;
}

inline CriterionResult auto_stack_tightening() {
  CriterionResult r{2, "auto stack tightens: ||v||^2 -> 0 with convergence",
                    false, ""};
  auto doc = builtin_scenario("sim1_independent");
  doc.timeline[0].stack.mode = "auto";
  const auto sc = compile_scenario(doc);
  const auto trace = run_scenario(sc);
  const double v2 = trace.back().v.squaredNorm();
  const double h_final = trace.back().h.cwiseAbs().maxCoeff();
  r.pass = v2 < 1e-6 && h_final < 1e-2;
  r.detail = "final ||v||^2 " + fmt(v2) + ", max final |h| " + fmt(h_final);
  return r;
}

inline CriterionResult dependent_prioritization() {
  CriterionResult r{3, "conflicting goals: top task wins, others plateau",
                    false, ""};
  const auto sc = compile_scenario(builtin_scenario("sim2_dependent"));
  const auto trace = run_scenario(sc);
  const auto& last = trace.back();
  const double h1 = std::abs(last.h(0));
  const double h2 = std::abs(last.h(1));
  const double h3 = std::abs(last.h(2));
  double drift = 0.0;
  const size_t tail = std::min<size_t>(1000, trace.size());
  for (size_t k = trace.size() - tail; k < trace.size(); ++k)
    for (int i : {1, 2})
      drift = std::max(drift, std::abs(trace[k].h(i) - last.h(i)));
  const double v2 = last.v.squaredNorm();
  r.pass = h1 < 1e-2 && h2 > 0.05 && h3 > 0.05 && drift < 1e-3 && v2 > 1e-4;
  r.detail = "|h1| " + fmt(h1) + ", |h2| " + fmt(h2) + ", |h3| " + fmt(h3) +
             ", tail drift " + fmt(drift) + ", ||v||^2 " + fmt(v2);
  return r;
}

inline CriterionResult priority_switching() {
  CriterionResult r{4, "priority rotation: segment leaders converge, u stays "
                       "continuous", false, ""};
  const auto sc = compile_scenario(builtin_scenario("sim3_switching"));
  const auto trace = run_scenario(sc);
  bool conv = true;
  for (const auto& seg : sc.timeline) {
    const long end = std::min<long>(seg.until_iteration,
                                    static_cast<long>(trace.size())) - 1;
    const int top = task_index(sc, seg.stack.ordered_tasks.front().front());
    const double h_end = std::abs(trace[static_cast<size_t>(end)].h(top));
    r.detail += " |h_" + sc.tasks[static_cast<size_t>(top)].id + "| at " +
                std::to_string(end) + ": " + fmt(h_end) + ";";
    conv = conv && h_end < 2e-2;
  }
  const auto summary = summarize_trace(sc, trace);
  const bool cont = continuity_all_pass(summary, r.detail);
  r.pass = conv && cont;
  return r;
}

inline CriterionResult insertion_removal() {
  CriterionResult r{5, "task insertion under hard joint limits", false, ""};
  const auto sc = compile_scenario(builtin_scenario("sim4_insert_remove"));
  const auto trace = run_scenario(sc);
  double hmin = std::numeric_limits<double>::infinity();
  for (const auto& rec : trace)
    for (size_t i = 0; i < sc.tasks.size(); ++i)
      if (sc.tasks[i].safety_critical)
        hmin = std::min(hmin, rec.h(static_cast<Eigen::Index>(i)));
  r.detail = "min limit h " + fmt(hmin) + ";";
  const auto summary = summarize_trace(sc, trace);
  const bool cont = continuity_all_pass(summary, r.detail);
  r.pass = hmin >= -1e-6 && cont;
  return r;
}

inline CriterionResult dynamic_torque_bounds() {
  CriterionResult r{6, "torque-rate control respects the 60 Nm barrier",
                    false, ""};
  const auto sc = compile_scenario(builtin_scenario("sim5_dynamic"));
  const auto trace = run_scenario(sc);
  double tau_max = 0.0;
  for (const auto& rec : trace)
    tau_max = std::max(tau_max, rec.tau.lpNorm<Eigen::Infinity>());
  // Sample the first task at the end of the first segment (just before the
  // priority swap) and the second task at the end of the run.
  const long swap = sc.timeline.front().until_iteration;
  const auto& mid = trace[static_cast<size_t>(swap) - 1];
  const auto& last = trace.back();
  const double mid_h1 = std::abs(mid.h(0));
  const double mid_hp1 = std::abs(mid.h_prime(0));
  const double end_h2 = std::abs(last.h(1));
  const double end_hp2 = std::abs(last.h_prime(1));
  r.detail = "max ||tau||_inf " + fmt(tau_max) + ", mid |h1| " + fmt(mid_h1) +
             ", mid |h1'| " + fmt(mid_hp1) + ", end |h2| " + fmt(end_h2) +
             ", end |h2'| " + fmt(end_hp2) + ";";
  const auto summary = summarize_trace(sc, trace);
  const bool cont = continuity_all_pass(summary, r.detail);
  r.pass = tau_max <= sc.u_max + 1e-6 && mid_h1 < 5e-2 && mid_hp1 < 5e-2 &&
           end_h2 < 5e-2 && end_hp2 < 5e-2 && cont;
  return r;
}

inline CriterionResult rank_loss_robustness() {
  CriterionResult r{7, "rank loss flagged near the predicted configuration, "
                       "no spikes", false, ""};
  const auto sc = compile_scenario(builtin_scenario("ex5_rank_loss"));
  const auto trace = run_scenario(sc);
  long first = -1;
  for (const auto& rec : trace)
    if (rec.rank_drop) {
      first = rec.iteration;
      break;
    }
  if (first < 0) {
    r.detail = "rank drop never flagged";
    return r;
  }
  const auto& rec = trace[static_cast<size_t>(first)];
  Vec ref(2);
  ref << -1.0004, 0.0;
  const double dist = (rec.q - ref).norm();

  // Anti-explosion check: the per-step change of u and h while the drop flag
  // fires must stay on the trace's own magnitude scale (10x the median of
  // each channel's infinity norm), i.e. the solver must not spike when the
  // stack matrix degenerates.
  std::vector<double> mag_u, mag_h;
  for (const auto& t : trace) {
    mag_u.push_back(t.u.lpNorm<Eigen::Infinity>());
    mag_h.push_back(t.h.lpNorm<Eigen::Infinity>());
  }
  const double med_u = median(mag_u);
  const double med_h = median(mag_h);
  const size_t kf = static_cast<size_t>(std::max<long>(first, 1));
  const double ju =
      (trace[kf].u - trace[kf - 1].u).lpNorm<Eigen::Infinity>();
  const double jh =
      (trace[kf].h - trace[kf - 1].h).lpNorm<Eigen::Infinity>();
  r.pass = dist < 0.05 && ju <= 10.0 * med_u && jh <= 10.0 * med_h;
  r.detail = "first drop at " + std::to_string(first) + ", |q - q*| " +
             fmt(dist) + ", u jump " + fmt(ju) + " (10x median |u| " +
             fmt(10.0 * med_u) + "), h jump " + fmt(jh) +
             " (10x median |h| " + fmt(10.0 * med_h) + ")";
  return r;
}

inline CriterionResult kkt_oracle_equivalence(unsigned seed) {
  CriterionResult r{8, "QP solution matches the closed-form multi-task "
                       "solution", false, ""};
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> gdist(-1.0, 1.0);
  std::uniform_real_distribution<double> hdist(-2.0, -0.1);
  std::uniform_int_distribution<int> ndist(1, 5), mdist(1, 4);

  int tested = 0, attempts = 0;
  double worst = 0.0;
  while (tested < 100 && attempts < 5000) {
    ++attempts;
    const int n = ndist(rng), m = mdist(rng);
    Mat G = Mat::NullaryExpr(
        m, n, [&](Eigen::Index, Eigen::Index) { return gdist(rng); });
    Vec gamma = Vec::NullaryExpr(m, [&](Eigen::Index) { return hdist(rng); });
    const double l = 1e2;

    QpProblem p;
    p.H = Mat::Zero(n + m, n + m);
    p.H.topLeftCorner(n, n) = 2.0 * Mat::Identity(n, n);
    p.H.bottomRightCorner(m, m) = 2.0 * l * Mat::Identity(m, m);
    p.c = Vec::Zero(n + m);
    p.A = Mat::Zero(m, n + m);
    p.A.leftCols(n) = G;
    p.A.rightCols(m) = Mat::Identity(m, m);
    p.b = -gamma;
    const auto sol = solve_qp(p);
    if (sol.status != QpStatus::Optimal ||
        static_cast<int>(sol.active_set.size()) != m)
      continue;  // closed form assumes every task row is tight
    const auto oracle = analytic_unprioritized_solution(G, gamma, l);
    worst = std::max(
        worst,
        (sol.z_star.head(n) - oracle.qdot).lpNorm<Eigen::Infinity>());
    ++tested;
  }
  r.pass = tested == 100 && worst < 1e-6;
  r.detail = std::to_string(tested) + " instances, worst |qdot| error " +
             fmt(worst);
  return r;
}

inline CriterionResult projector_properties(unsigned seed) {
  CriterionResult r{9, "stacked-Jacobian projector symmetric PSD; identity "
                       "for orthogonal tasks", false, ""};
  const auto chain = LinkChain::uniform(4, 0.5);
  std::mt19937 rng(seed + 1);
  std::uniform_real_distribution<double> dist(-M_PI, M_PI);
  double asym = 0.0, min_eig = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Vec q = Vec::NullaryExpr(4, [&](Eigen::Index) { return dist(rng); });
    const Mat J1 = task_jacobian(chain, q, FrameSelector::link_point(4));
    const Mat J2 = task_jacobian(chain, q, FrameSelector::link_point(3));
    const Mat J3 = task_jacobian(chain, q, FrameSelector::link_point(2));
    Mat J(6, 4);
    J << J1, J2, J3;
    // Minimum-norm reconstruction of the stacked Jacobian; the per-task
    // pseudoinverse stack coincides with it only for orthogonal tasks.
    const Mat P = J * detail::pseudo_inverse(J);
    asym = std::max(asym, (P - P.transpose()).lpNorm<Eigen::Infinity>());
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (P + P.transpose()));
    min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
  }

  Mat J1 = Mat::Zero(1, 4), J2 = Mat::Zero(1, 4);
  J1(0, 0) = 1.0;
  J2(0, 2) = 1.0;
  Mat J(2, 4);
  J << J1, J2;
  Mat Jbar(4, 2);
  Jbar.col(0) = detail::pseudo_inverse(J1);
  Jbar.col(1) = detail::pseudo_inverse(J2);
  const double ortho_err =
      (J * Jbar - Mat::Identity(2, 2)).lpNorm<Eigen::Infinity>();

  r.pass = asym < 1e-9 && min_eig >= -1e-9 && ortho_err < 1e-9;
  r.detail = "max asymmetry " + fmt(asym) + ", min eigenvalue " +
             fmt(min_eig) + ", orthogonal-case |P - I| " + fmt(ortho_err);
  return r;
}

inline CriterionResult gradient_checks(unsigned seed) {
  CriterionResult r{10, "analytic task gradients match finite differences",
                    false, ""};
  const auto chain = LinkChain::uniform(3, 0.5);
  std::mt19937 rng(seed + 2);
  std::uniform_real_distribution<double> dist(-M_PI, M_PI);

  std::vector<EsbTask> tasks;
  Vec target(2);
  target << 0.4, 0.8;
  tasks.push_back(goal_point_task("g", FrameSelector::link_point(3), target,
                                  ClassKFunction::linear(1.0)));
  Vec jt(3);
  jt << 0.2, -0.4, 0.1;
  tasks.push_back(goal_point_task("gq", FrameSelector::joint_vector(), jt,
                                  ClassKFunction::linear(1.0)));
  tasks.push_back(orientation_task("o", 3, 0.7, ClassKFunction::linear(1.0)));
  tasks.push_back(look_at_point_task("lap", 3, Eigen::Vector2d(2.0, 1.5),
                                     ClassKFunction::linear(1.0)));
  for (auto& lim : joint_limit_tasks(Vec::Constant(3, 4.0),
                                     Vec::Constant(3, -4.0),
                                     ClassKFunction::linear(1.0)))
    tasks.push_back(std::move(lim));

  double worst = 0.0;
  const double eps = 1e-6;
  for (int cfg = 0; cfg < 100; ++cfg) {
    const Vec q = Vec::NullaryExpr(3, [&](Eigen::Index) { return dist(rng); });
    for (const auto& task : tasks) {
      const RowVec g = grad_wrt_q(task, chain, q, 0.0);
      RowVec fd(3);
      for (int i = 0; i < 3; ++i) {
        Vec qp = q, qm = q;
        qp(i) += eps;
        qm(i) -= eps;
        fd(i) = (task_h(task, chain, qp, 0.0) - task_h(task, chain, qm, 0.0)) /
                (2.0 * eps);
      }
      const double scale = std::max(1.0, fd.lpNorm<Eigen::Infinity>());
      worst = std::max(worst, (g - fd).lpNorm<Eigen::Infinity>() / scale);
    }
  }
  r.pass = worst < 1e-5;
  r.detail = "worst relative gradient error " + fmt(worst);
  return r;
}

inline CriterionResult slack_ordering(unsigned seed) {
  CriterionResult r{11, "slack ordering preserved along every switching path",
                    false, ""};
  std::mt19937 rng(seed + 3);
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  int tested = 0, violations = 0, attempts = 0;
  while (tested < 1000 && attempts < 100000) {
    ++attempts;
    Vec d1 = Vec::NullaryExpr(4, [&](Eigen::Index) { return dist(rng); });
    Vec d2 = Vec::NullaryExpr(4, [&](Eigen::Index) { return dist(rng); });
    const int i = attempts % 4;
    const int j = (attempts + 1) % 4;
    const auto ok = delta_ordering_preserved(d1, d2, i, j);
    if (!ok.has_value()) continue;  // precondition not met
    ++tested;
    if (!*ok) ++violations;
  }
  r.pass = tested == 1000 && violations == 0;
  r.detail = std::to_string(tested) + " pairs, " +
             std::to_string(violations) + " violations";
  return r;
}

inline CriterionResult safety_invariance(unsigned seed) {
  CriterionResult r{12, "joint limits invariant under adversarial goals",
                    false, ""};
  std::mt19937 rng(seed + 4);
  std::uniform_real_distribution<double> qdist(-0.8, 0.8);
  std::uniform_real_distribution<double> tdist(-2.0, 2.0);
  double hmin = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 20; ++trial) {
    Scenario sc;
    sc.chain = LinkChain::uniform(3, 0.5);
    Vec qp_lim(3);
    qp_lim << M_PI, 2.0 * M_PI / 3.0, 2.0 * M_PI / 3.0;
    Vec tgt(2);
    tgt << tdist(rng), tdist(rng);
    sc.tasks.push_back(goal_point_task("goal", FrameSelector::link_point(3),
                                       tgt, ClassKFunction::linear(1.0)));
    for (auto& lim :
         joint_limit_tasks(qp_lim, -qp_lim, ClassKFunction::linear(1.0)))
      sc.tasks.push_back(std::move(lim));
    sc.timeline.push_back({600, StackSpec{{{"goal"}}, 1e3, StackMode::Fixed}});
    sc.initial_state = {
        Vec::NullaryExpr(3, [&](Eigen::Index) { return qdist(rng); }),
        Vec::Zero(3)};
    for (const auto& rec : run_scenario(sc))
      hmin = std::min(hmin, rec.h.tail(6).minCoeff());
  }
  r.pass = hmin >= -1e-6;
  r.detail = "min limit h over 20 scenarios " + fmt(hmin);
  return r;
}

}  // namespace detail_acceptance

// fast: randomized property criteria (8-12) plus the quick baseline scenario
// check (1).  full: everything.
inline std::vector<CriterionResult> run_acceptance_suite(
    bool full, unsigned seed = 2024) {
  using namespace detail_acceptance;
  std::vector<CriterionResult> results;
  results.push_back(independent_convergence());
  if (full) {
    results.push_back(auto_stack_tightening());
    results.push_back(dependent_prioritization());
    results.push_back(priority_switching());
    results.push_back(insertion_removal());
    results.push_back(dynamic_torque_bounds());
    results.push_back(rank_loss_robustness());
  }
  results.push_back(kkt_oracle_equivalence(seed));
  results.push_back(projector_properties(seed));
  results.push_back(gradient_checks(seed));
  results.push_back(slack_ordering(seed));
  results.push_back(safety_invariance(seed));
  return results;
}

}  // namespace esb
