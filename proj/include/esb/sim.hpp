#pragma once

// Deterministic closed-loop simulation: integrators, timeline execution with
// stack switching, stability diagnostics (Lyapunov values, active sets, the
// z-vector, rank monitoring) and the velocity-tracking torque inner loop.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "esb/chain.hpp"
#include "esb/dynamics.hpp"
#include "esb/priority.hpp"
#include "esb/qp.hpp"
#include "esb/task.hpp"

namespace esb {

enum class ModelKind { Kinematic, Dynamic, DynamicWithVelocityTracking };
enum class IntegratorMethod { Euler, Rk4 };

struct TimelineSegment {
  long until_iteration = 0;  // exclusive upper bound of the segment
  StackSpec stack;
};

struct Scenario {
  std::string name;
  LinkChain chain;
  ModelKind model_kind = ModelKind::Kinematic;
  std::vector<EsbTask> tasks;
  std::vector<TimelineSegment> timeline;
  double switch_duration_s = 0.5;
  SwitchProfile switch_profile = SwitchProfile::Linear;
  IntegratorMethod integrator = IntegratorMethod::Euler;
  double dt = 0.01;
  RobotState initial_state;
  Vec initial_tau;  // dynamic models only; defaults to zero
  ControllerWeights weights;
  double u_max = 60.0;
  double gamma_u_gain = 10.0;  // torque-bound barrier gain
  double k_u = 100.0, k_q = 36.0;  // velocity-tracking gains
  double rank_tol = 5e-3;
  SolverConfig solver;

  void validate() const {
    chain.validate();
    if (!(dt > 0.0)) throw std::invalid_argument("Scenario: dt must be positive");
    if (timeline.empty())
      throw std::invalid_argument("Scenario: empty timeline");
    long prev = 0;
    for (const auto& seg : timeline) {
      if (seg.until_iteration <= prev)
        throw std::invalid_argument("Scenario: timeline spans must be increasing");
      prev = seg.until_iteration;
    }
    if (initial_state.q.size() != chain.dof() ||
        initial_state.qdot.size() != chain.dof())
      throw std::invalid_argument("Scenario: initial state dimension mismatch");
  }
};

struct TraceRecord {
  double t = 0.0;
  long iteration = 0;
  Vec q, qdot;
  Vec u;    // commanded joint velocities (kinematic) or torque rates (dynamic)
  Vec tau;  // empty for kinematic models
  Vec h;
  Vec h_prime;  // empty unless the model is dynamic
  Vec delta;    // per-task slack (zero for tasks outside the active stack)
  Vec v;        // stack relaxation (auto mode)
  double V_gamma = 0.0;
  double V_z = 0.0;
  Vec z;
  std::vector<int> active_set;
  int rank_value = 0;
  bool rank_drop = false;
  double du_inf = 0.0;
};

struct StabilityDiagnostics {
  Mat Sigma;   // task-row selection, tasks x |I_t|
  Mat Sigma0;  // all-row selection, rows x |I|
  Mat K_bar;   // K columns restricted to active tasks
  Vec z;       // K_bar Sigma' gamma(h)
  double convergence_set_residual = 0.0;
};

// --- Integrators -------------------------------------------------------------

// qdot = u is constant over the step, so every Runge-Kutta scheme collapses
// to the Euler update.
inline Vec step_kinematic(const LinkChain& chain, const Vec& q, const Vec& u,
                          double dt) {
  if (q.size() != chain.dof() || u.size() != chain.dof())
    throw std::invalid_argument("step_kinematic: dimension mismatch");
  return q + dt * u;
}

// Classic RK4 on the second-order system with zero-order-hold torque.
inline RobotState step_dynamic(const LinkChain& chain, const RobotState& state,
                               const Vec& tau, double dt) {
  auto deriv = [&](const RobotState& x) {
    RobotState d;
    d.q = x.qdot;
    d.qdot = forward_dynamics(chain, x, tau);
    return d;
  };
  auto advance = [](const RobotState& x, const RobotState& d, double s) {
    return RobotState{x.q + s * d.q, x.qdot + s * d.qdot};
  };
  const RobotState k1 = deriv(state);
  const RobotState k2 = deriv(advance(state, k1, dt / 2));
  const RobotState k3 = deriv(advance(state, k2, dt / 2));
  const RobotState k4 = deriv(advance(state, k3, dt));
  RobotState out;
  out.q = state.q + dt / 6.0 * (k1.q + 2 * k2.q + 2 * k3.q + k4.q);
  out.qdot =
      state.qdot + dt / 6.0 * (k1.qdot + 2 * k2.qdot + 2 * k3.qdot + k4.qdot);
  return out;
}

// Inner-loop torque tracking a commanded joint velocity, with the position
// reference maintained by integrating the command.
inline Vec velocity_tracking_torque(const Vec& u_des, const Vec& q_d,
                                    const RobotState& state, double k_u,
                                    double k_q) {
  if (u_des.size() != state.q.size() || q_d.size() != state.q.size())
    throw std::invalid_argument("velocity_tracking_torque: dimension mismatch");
  return k_u * (u_des - state.qdot) + k_q * (q_d - state.q);
}

// --- Diagnostics -------------------------------------------------------------

// task_rows: constraint-row index of each K column's task in the solved QP.
inline StabilityDiagnostics active_set_diagnostics(
    const QpSolution& solution, const Mat& K, const Vec& gamma_h,
    std::vector<int> task_rows = {}) {
  const int m = static_cast<int>(K.cols());
  if (gamma_h.size() != m)
    throw std::invalid_argument("active_set_diagnostics: size mismatch");
  if (task_rows.empty()) {
    task_rows.resize(m);
    for (int i = 0; i < m; ++i) task_rows[i] = i;
  }

  std::vector<int> active_tasks;
  for (int i = 0; i < m; ++i)
    if (std::find(solution.active_set.begin(), solution.active_set.end(),
                  task_rows[i]) != solution.active_set.end())
      active_tasks.push_back(i);

  StabilityDiagnostics out;
  out.Sigma = Mat::Zero(m, static_cast<int>(active_tasks.size()));
  for (size_t c = 0; c < active_tasks.size(); ++c)
    out.Sigma(active_tasks[c], static_cast<int>(c)) = 1.0;
  out.K_bar = K * out.Sigma;
  out.z = out.K_bar * out.Sigma.transpose() * gamma_h;
  out.convergence_set_residual = out.z.norm();

  // Selection over every constraint row of the QP.
  int total_rows = 0;
  for (int idx : solution.active_set) total_rows = std::max(total_rows, idx + 1);
  total_rows = std::max(total_rows, m + static_cast<int>(K.rows()));
  out.Sigma0 = Mat::Zero(total_rows, static_cast<int>(solution.active_set.size()));
  for (size_t c = 0; c < solution.active_set.size(); ++c)
    out.Sigma0(solution.active_set[c], static_cast<int>(c)) = 1.0;
  return out;
}

struct RankInfo {
  int rank = 0;
  bool drop = false;
};

// Numerical rank of K_bar Sigma' dh/dq. With |I_t| active tasks, the
// prioritized KKT system stays solvable while the rank is at least |I_t|-1;
// the drop flag marks configurations below that.
inline RankInfo rank_monitor(const Mat& K_bar, const Mat& Sigma,
                             const Mat& grad_h, double tol,
                             bool absolute_tol = true) {
  const Mat A = K_bar * Sigma.transpose() * grad_h;
  RankInfo out;
  const int active = static_cast<int>(Sigma.cols());
  if (A.rows() == 0 || A.cols() == 0) {
    out.drop = 0 < active - 1;
    return out;
  }
  Eigen::JacobiSVD<Mat> svd(A);
  const double cutoff =
      absolute_tol ? tol : tol * svd.singularValues()(0);
  out.rank = static_cast<int>(
      (svd.singularValues().array() > cutoff).count());
  out.drop = out.rank < active - 1;
  return out;
}

struct ContinuityReport {
  double max_jump = 0.0;
  bool pass = true;
};

inline ContinuityReport continuity_checker(const std::vector<Vec>& channel,
                                           double threshold) {
  if (channel.empty())
    throw std::invalid_argument("continuity_checker: empty trace");
  ContinuityReport out;
  for (size_t k = 1; k < channel.size(); ++k)
    out.max_jump =
        std::max(out.max_jump, (channel[k] - channel[k - 1]).lpNorm<Eigen::Infinity>());
  out.pass = out.max_jump <= threshold;
  return out;
}

enum class BaselineMode { Superposition, NullSpace };

namespace detail {

inline Mat pseudo_inverse(const Mat& A, double rel_cutoff = 1e-8) {
  Eigen::JacobiSVD<Mat> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  const double cutoff = s.size() > 0 ? rel_cutoff * s(0) : 0.0;
  Vec inv = Vec::Zero(s.size());
  for (int i = 0; i < s.size(); ++i)
    if (s(i) > cutoff) inv(i) = 1.0 / s(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

// Task error vector driven to zero by the baseline controllers. For goal
// tasks h = -1/2 ||e||^2, so e = -(dh/dsigma)'.
inline Vec baseline_task_error(const EsbTask& task, const LinkChain& chain,
                               const Vec& q) {
  const Vec sigma = task_sigma(task, chain, q);
  return -task.dh_dsigma(sigma, 0.0).transpose();
}

}  // namespace detail

// Classical Jacobian controllers used as comparison oracles: plain
// pseudoinverse superposition and successive null-space projection.
inline Vec jacobian_baseline_controllers(const std::vector<EsbTask>& tasks,
                                         const LinkChain& chain, const Vec& q,
                                         BaselineMode mode) {
  const int n = chain.dof();
  Vec qdot = Vec::Zero(n);
  Mat stacked(0, n);
  for (const auto& task : tasks) {
    const Mat J = task_jacobian(chain, q, task.selector);
    const Vec e = detail::baseline_task_error(task, chain, q);
    Mat projector = Mat::Identity(n, n);
    if (mode == BaselineMode::NullSpace && stacked.rows() > 0)
      projector -= detail::pseudo_inverse(stacked) * stacked;
    qdot -= projector * detail::pseudo_inverse(J) * e;
    if (mode == BaselineMode::NullSpace) {
      stacked.conservativeResize(stacked.rows() + J.rows(), n);
      stacked.bottomRows(J.rows()) = J;
    }
  }
  return qdot;
}

// --- Scenario execution ------------------------------------------------------

namespace detail {

// Tasks entering a segment's QP: everything safety-critical plus the tasks the
// stack currently lists, in scenario order (insert/remove semantics).
inline std::vector<EsbTask> tasks_for_stack(const std::vector<EsbTask>& tasks,
                                            const StackSpec& stack) {
  const auto ids = stack.flattened();
  std::vector<EsbTask> out;
  for (const auto& task : tasks) {
    if (task.safety_critical ||
        std::find(ids.begin(), ids.end(), task.id) != ids.end())
      out.push_back(task);
  }
  return out;
}

struct SegmentSolve {
  ControllerOutput out;
  std::vector<EsbTask> qp_tasks;
  Mat K;                        // stack matrix over the slacked tasks
  std::vector<int> slack_rows;  // QP row index per K column
};

inline SegmentSolve solve_segment(const Scenario& sc, const StackSpec& stack,
                                  const RobotState& state, const Vec& tau,
                                  double t) {
  SegmentSolve s;
  s.qp_tasks = tasks_for_stack(sc.tasks, stack);
  const auto sl = slack_layout(s.qp_tasks);
  s.K = stack_k_for_tasks(s.qp_tasks, stack, sl);
  for (size_t i = 0; i < s.qp_tasks.size(); ++i)
    if (sl.delta_col[i] >= 0) s.slack_rows.push_back(static_cast<int>(i));

  QpProblem qp;
  if (sc.model_kind == ModelKind::Dynamic) {
    std::vector<AuxiliaryCbf> aux;
    aux.reserve(s.qp_tasks.size());
    for (const auto& task : s.qp_tasks)
      aux.push_back(auxiliary_cbf(task, sc.chain, state, t, task.gamma));
    qp = assemble_dynamic_qp(s.qp_tasks, aux, sc.chain, state, tau, stack,
                             sc.u_max, sc.weights, sc.dt,
                             ClassKFunction::linear(sc.gamma_u_gain));
  } else if (stack.mode == StackMode::Auto) {
    qp = assemble_auto_stack_qp(s.qp_tasks, sc.chain, state.q, stack,
                                sc.weights, t);
  } else {
    qp = assemble_fixed_stack_qp(s.qp_tasks, sc.chain, state.q, stack,
                                 sc.weights, t);
  }
  auto solution = solve_qp(qp, sc.solver);
  if (solution.status != QpStatus::Optimal)
    throw std::runtime_error("solve_segment: QP not solved to optimality");
  s.out = extract_controller_output(s.qp_tasks, qp, std::move(solution));
  return s;
}

inline int task_index_by_id(const std::vector<EsbTask>& tasks,
                            const std::string& id) {
  for (size_t i = 0; i < tasks.size(); ++i)
    if (tasks[i].id == id) return static_cast<int>(i);
  return -1;
}

}  // namespace detail

inline std::vector<TraceRecord> run_scenario(const Scenario& sc) {
  sc.validate();
  const int n = sc.chain.dof();
  const int m = static_cast<int>(sc.tasks.size());
  const bool dynamic = sc.model_kind != ModelKind::Kinematic;
  const long total = sc.timeline.back().until_iteration;

  RobotState state = sc.initial_state;
  Vec tau = sc.initial_tau.size() == n ? sc.initial_tau : Vec::Zero(n);
  Vec q_d = state.q;  // velocity-tracking position reference
  Vec prev_u;

  std::vector<TraceRecord> trace;
  trace.reserve(static_cast<size_t>(total));

  size_t seg_idx = 0;
  for (long iter = 0; iter < total; ++iter) {
    const double t = iter * sc.dt;
    while (iter >= sc.timeline[seg_idx].until_iteration) ++seg_idx;
    const StackSpec& stack = sc.timeline[seg_idx].stack;

    const long seg_start = seg_idx == 0
                               ? 0
                               : sc.timeline[seg_idx - 1].until_iteration;
    const double since_switch = (iter - seg_start) * sc.dt;
    const bool in_window = seg_idx > 0 && since_switch < sc.switch_duration_s &&
                           !sc.tasks.empty();

    TraceRecord rec;
    rec.t = t;
    rec.iteration = iter;
    rec.q = state.q;
    rec.qdot = state.qdot;
    rec.h = Vec::Zero(m);
    Vec gamma_all = Vec::Zero(m);
    for (int i = 0; i < m; ++i) {
      rec.h(i) = task_h(sc.tasks[i], sc.chain, state.q, t);
      gamma_all(i) = sc.tasks[i].gamma(rec.h(i));
    }
    rec.V_gamma = 0.5 * gamma_all.squaredNorm();
    if (dynamic) {
      rec.h_prime = Vec::Zero(m);
      for (int i = 0; i < m; ++i)
        rec.h_prime(i) =
            auxiliary_cbf(sc.tasks[i], sc.chain, state, t, sc.tasks[i].gamma)
                .value;
      rec.tau = tau;
    }

    Vec u = Vec::Zero(n);
    rec.delta = Vec::Zero(m);
    if (!sc.tasks.empty()) {
      auto current = detail::solve_segment(sc, stack, state, tau, t);
      u = current.out.u;
      if (in_window) {
        SwitchSchedule schedule;
        schedule.stack_a = sc.timeline[seg_idx - 1].stack;
        schedule.stack_b = stack;
        schedule.T = sc.switch_duration_s;
        schedule.s_profile = sc.switch_profile;
        auto outgoing =
            detail::solve_segment(sc, schedule.stack_a, state, tau, t);
        u = switching_controller(outgoing.out.u, current.out.u, since_switch,
                                 schedule);
      }

      for (size_t i = 0; i < current.qp_tasks.size(); ++i) {
        const int full = detail::task_index_by_id(sc.tasks,
                                                  current.qp_tasks[i].id);
        if (full >= 0) rec.delta(full) = current.out.delta(static_cast<int>(i));
      }
      rec.v = current.out.v;
      rec.active_set = current.out.qp_solution.active_set;

      // Stack diagnostics over the slacked tasks of the active stack.
      Vec gamma_stack(current.slack_rows.size());
      Mat grad_stack(static_cast<int>(current.slack_rows.size()), n);
      for (size_t c = 0; c < current.slack_rows.size(); ++c) {
        const auto& task = current.qp_tasks[current.slack_rows[c]];
        gamma_stack(static_cast<int>(c)) =
            task.gamma(task_h(task, sc.chain, state.q, t));
        grad_stack.row(static_cast<int>(c)) =
            grad_wrt_q(task, sc.chain, state.q, t);
      }
      const auto diag = active_set_diagnostics(
          current.out.qp_solution, current.K, gamma_stack, current.slack_rows);
      rec.z = diag.z;
      rec.V_z = 0.5 * diag.z.squaredNorm();
      const auto rank =
          rank_monitor(diag.K_bar, diag.Sigma, grad_stack, sc.rank_tol);
      rec.rank_value = rank.rank;
      rec.rank_drop = rank.drop;
    }

    rec.u = u;
    rec.du_inf = prev_u.size() == u.size()
                     ? (u - prev_u).lpNorm<Eigen::Infinity>()
                     : 0.0;
    prev_u = u;
    trace.push_back(rec);

    // Integrate.
    if (sc.model_kind == ModelKind::Kinematic) {
      state.q = step_kinematic(sc.chain, state.q, u, sc.dt);
      state.qdot = u;
    } else if (sc.model_kind == ModelKind::Dynamic) {
      // u is a torque rate on the extended model; Euler on tau, RK4 on the
      // mechanical state, then an exact projection onto the torque ball to
      // remove the O(dt^2) discretization overshoot of the integral barrier.
      tau += sc.dt * u;
      if (tau.norm() > sc.u_max) tau *= sc.u_max / tau.norm();
      state = step_dynamic(sc.chain, state, tau, sc.dt);
    } else {
      q_d += sc.dt * u;
      tau = velocity_tracking_torque(u, q_d, state, sc.k_u, sc.k_q);
      state = step_dynamic(sc.chain, state, tau, sc.dt);
    }
  }
  return trace;
}

}  // namespace esb
