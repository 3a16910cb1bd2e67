#pragma once

// Prioritization/relaxation matrices, the controller QP assemblies (fixed
// stack, auto stack, dynamically-extended torque model), stack switching,
// and offline Gamma selection for the auxiliary barriers.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "esb/chain.hpp"
#include "esb/class_k.hpp"
#include "esb/dynamics.hpp"
#include "esb/qp.hpp"
#include "esb/task.hpp"

namespace esb {

enum class StackMode { Fixed, Auto };

struct StackSpec {
  // Highest priority first; each inner group holds tasks of equal priority.
  std::vector<std::vector<std::string>> ordered_tasks;
  double kappa = 1e3;
  StackMode mode = StackMode::Fixed;

  std::vector<std::string> flattened() const {
    std::vector<std::string> ids;
    for (const auto& group : ordered_tasks)
      ids.insert(ids.end(), group.begin(), group.end());
    return ids;
  }

  void validate() const {
    if (ordered_tasks.empty() || flattened().empty())
      throw std::invalid_argument("StackSpec: empty stack");
    if (!(kappa > 1.0))
      throw std::invalid_argument("StackSpec: kappa must exceed 1");
    auto ids = flattened();
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
      throw std::invalid_argument("StackSpec: duplicate task id");
  }
};

struct PrioritizationMatrix {
  Mat K;                                  // rows: delta_i - delta_j / kappa <= 0
  std::vector<std::string> column_ids;    // task id owning each column
};

struct ControllerWeights {
  double l = 1e2;        // task slack weight (fixed stack / dynamic)
  double l_delta = 1e2;  // task slack weight (auto stack)
  double l_v = 1e2;      // stack slack weight (auto stack)
};

struct ControllerOutput {
  Vec u;      // joint velocities (kinematic) or torque rates (dynamic)
  Vec delta;  // per-task slack, structurally zero for safety-critical tasks
  Vec v;      // stack relaxation (auto mode only)
  QpSolution qp_solution;
};

// K columns follow column_order; one row per priority relation between
// consecutive groups (all cross pairs), none inside a group.
inline PrioritizationMatrix build_prioritization_matrix(
    const StackSpec& stack, const std::vector<std::string>& column_order) {
  stack.validate();
  std::map<std::string, int> col;
  for (int i = 0; i < static_cast<int>(column_order.size()); ++i)
    col[column_order[i]] = i;
  for (const auto& id : stack.flattened())
    if (!col.count(id))
      throw std::invalid_argument("build_prioritization_matrix: unknown task id " + id);

  std::vector<std::pair<int, int>> relations;  // (higher, lower) column pairs
  for (size_t g = 0; g + 1 < stack.ordered_tasks.size(); ++g)
    for (const auto& hi : stack.ordered_tasks[g])
      for (const auto& lo : stack.ordered_tasks[g + 1])
        relations.emplace_back(col.at(hi), col.at(lo));

  PrioritizationMatrix out;
  out.column_ids = column_order;
  out.K = Mat::Zero(static_cast<int>(relations.size()),
                    static_cast<int>(column_order.size()));
  for (int r = 0; r < out.K.rows(); ++r) {
    out.K(r, relations[r].first) = 1.0;
    out.K(r, relations[r].second) = -1.0 / stack.kappa;
  }
  return out;
}

// Column order taken from the stack itself (sequential chains).
inline PrioritizationMatrix build_prioritization_matrix(const StackSpec& stack) {
  return build_prioritization_matrix(stack, stack.flattened());
}

// V = diag(kappa^-1, kappa^0, ..., kappa^(M-3)); scales the stack slack so its
// components stay of comparable magnitude across priority levels.
inline Mat build_v_matrix(int task_count, double kappa) {
  if (task_count < 2)
    throw std::invalid_argument("build_v_matrix: need at least two tasks");
  Vec d(task_count - 1);
  for (int i = 0; i < task_count - 1; ++i) d(i) = std::pow(kappa, i - 1);
  return d.asDiagonal();
}

namespace detail {

struct SlackLayout {
  std::vector<int> delta_col;  // per task: slack column within delta block, -1 if none
  int num_slacks = 0;
};

inline SlackLayout slack_layout(const std::vector<EsbTask>& tasks) {
  SlackLayout out;
  out.delta_col.resize(tasks.size(), -1);
  for (size_t i = 0; i < tasks.size(); ++i)
    if (!tasks[i].safety_critical) out.delta_col[i] = out.num_slacks++;
  return out;
}

// Prioritization matrix over the slacked tasks only, columns in task order.
inline Mat stack_k_for_tasks(const std::vector<EsbTask>& tasks,
                             const StackSpec& stack, const SlackLayout& sl) {
  std::vector<std::string> slack_ids;
  for (size_t i = 0; i < tasks.size(); ++i)
    if (sl.delta_col[i] >= 0) slack_ids.push_back(tasks[i].id);
  return build_prioritization_matrix(stack, slack_ids).K;
}

constexpr double kHRegularization = 1e-10;

}  // namespace detail

// Fixed-stack kinematic controller: variables (u, delta), cost
// ||u||^2 + l ||delta||^2, one barrier row per task, K delta <= 0.
inline QpProblem assemble_fixed_stack_qp(const std::vector<EsbTask>& tasks,
                                         const LinkChain& chain, const Vec& q,
                                         const StackSpec& stack,
                                         const ControllerWeights& weights,
                                         double t = 0.0) {
  const int n = chain.dof();
  const int m = static_cast<int>(tasks.size());
  const auto sl = detail::slack_layout(tasks);
  const Mat K = detail::stack_k_for_tasks(tasks, stack, sl);

  QpProblem qp;
  const int nv = n + sl.num_slacks;
  qp.layout.u_offset = 0;
  qp.layout.u_size = n;
  qp.layout.delta_offset = n;
  qp.layout.delta_size = sl.num_slacks;

  qp.H = Mat::Zero(nv, nv);
  qp.H.topLeftCorner(n, n) = 2.0 * Mat::Identity(n, n);
  qp.H.bottomRightCorner(sl.num_slacks, sl.num_slacks) =
      2.0 * weights.l * Mat::Identity(sl.num_slacks, sl.num_slacks);
  qp.H.diagonal().array() += detail::kHRegularization;
  qp.c = Vec::Zero(nv);

  const int rows = m + static_cast<int>(K.rows());
  qp.A = Mat::Zero(rows, nv);
  qp.b = Vec::Zero(rows);
  for (int i = 0; i < m; ++i) {
    const double h = task_h(tasks[i], chain, q, t);
    qp.A.row(i).head(n) = grad_wrt_q(tasks[i], chain, q, t);
    if (sl.delta_col[i] >= 0) qp.A(i, n + sl.delta_col[i]) = 1.0;
    qp.b(i) = -task_dh_dt(tasks[i], chain, q, t) - tasks[i].gamma(h);
  }
  // K delta <= 0 in A z >= b form.
  qp.A.block(m, n, K.rows(), sl.num_slacks) = -K;
  return qp;
}

// Auto-stack controller: variables (u, delta, v), relaxed stack constraint
// K delta <= V v, cost ||u||^2 + l_delta ||delta||^2 + l_v ||v||^2.
inline QpProblem assemble_auto_stack_qp(const std::vector<EsbTask>& tasks,
                                        const LinkChain& chain, const Vec& q,
                                        const StackSpec& stack,
                                        const ControllerWeights& weights,
                                        double t = 0.0) {
  const int n = chain.dof();
  const int m = static_cast<int>(tasks.size());
  const auto sl = detail::slack_layout(tasks);
  const Mat K = detail::stack_k_for_tasks(tasks, stack, sl);
  const int mv = static_cast<int>(K.rows());
  const Mat V = mv > 0 ? build_v_matrix(mv + 1, stack.kappa) : Mat(0, 0);

  QpProblem qp;
  const int nv = n + sl.num_slacks + mv;
  qp.layout.u_offset = 0;
  qp.layout.u_size = n;
  qp.layout.delta_offset = n;
  qp.layout.delta_size = sl.num_slacks;
  qp.layout.v_offset = n + sl.num_slacks;
  qp.layout.v_size = mv;

  qp.H = Mat::Zero(nv, nv);
  qp.H.topLeftCorner(n, n) = 2.0 * Mat::Identity(n, n);
  qp.H.block(n, n, sl.num_slacks, sl.num_slacks) =
      2.0 * weights.l_delta * Mat::Identity(sl.num_slacks, sl.num_slacks);
  qp.H.bottomRightCorner(mv, mv) = 2.0 * weights.l_v * Mat::Identity(mv, mv);
  qp.H.diagonal().array() += detail::kHRegularization;
  qp.c = Vec::Zero(nv);

  qp.A = Mat::Zero(m + mv, nv);
  qp.b = Vec::Zero(m + mv);
  for (int i = 0; i < m; ++i) {
    const double h = task_h(tasks[i], chain, q, t);
    qp.A.row(i).head(n) = grad_wrt_q(tasks[i], chain, q, t);
    if (sl.delta_col[i] >= 0) qp.A(i, n + sl.delta_col[i]) = 1.0;
    qp.b(i) = -task_dh_dt(tasks[i], chain, q, t) - tasks[i].gamma(h);
  }
  // V v - K delta >= 0.
  qp.A.block(m, n, mv, sl.num_slacks) = -K;
  qp.A.block(m, n + sl.num_slacks, mv, mv) = V;
  return qp;
}

// Torque-rate controller on the dynamically extended model. The auxiliary
// barriers h' have relative degree one in the torque tau but zero direct
// dependence on the torque rate u'; the task rows therefore constrain the
// one-step-ahead torque tau + dt u', which restores input dependence while
// preserving the barrier inequality up to O(dt) integration error:
//   dh'(x, tau + dt u') + gamma'(h') >= -delta_i.
// The torque bound is an integral CBF on h_u = u_max^2 - ||tau||^2 with
// dh_u = -2 tau' u', enforced without slack.
inline QpProblem assemble_dynamic_qp(const std::vector<EsbTask>& tasks,
                                     const std::vector<AuxiliaryCbf>& aux,
                                     const LinkChain& chain,
                                     const RobotState& state, const Vec& tau,
                                     const StackSpec& stack, double u_max,
                                     const ControllerWeights& weights,
                                     double dt,
                                     const ClassKFunction& gamma_u =
                                         ClassKFunction::linear(10.0)) {
  const int n = chain.dof();
  const int m = static_cast<int>(tasks.size());
  if (static_cast<int>(aux.size()) != m)
    throw std::invalid_argument("assemble_dynamic_qp: tasks/aux size mismatch");
  double h_u = u_max * u_max - tau.squaredNorm();
  if (h_u < -1e-9 * std::max(1.0, u_max * u_max))
    throw std::invalid_argument("assemble_dynamic_qp: initial torque outside bound");
  h_u = std::max(h_u, 0.0);

  const auto sl = detail::slack_layout(tasks);
  const Mat K = detail::stack_k_for_tasks(tasks, stack, sl);
  const auto dyn = dynamics_terms(chain, state);
  const Eigen::LDLT<Mat> Dltl(dyn.D);
  const Vec bias = dyn.C * state.qdot + dyn.friction + dyn.g_vec;

  QpProblem qp;
  const int nv = n + sl.num_slacks;
  qp.layout.u_offset = 0;
  qp.layout.u_size = n;
  qp.layout.delta_offset = n;
  qp.layout.delta_size = sl.num_slacks;

  qp.H = Mat::Zero(nv, nv);
  qp.H.topLeftCorner(n, n) = 2.0 * Mat::Identity(n, n);
  qp.H.bottomRightCorner(sl.num_slacks, sl.num_slacks) =
      2.0 * weights.l * Mat::Identity(sl.num_slacks, sl.num_slacks);
  qp.H.diagonal().array() += detail::kHRegularization;
  qp.c = Vec::Zero(nv);

  const int rows = m + static_cast<int>(K.rows()) + 1;
  qp.A = Mat::Zero(rows, nv);
  qp.b = Vec::Zero(rows);
  for (int i = 0; i < m; ++i) {
    const RowVec gs_q = aux[i].grad_state.head(n);
    const RowVec gs_qd = aux[i].grad_state.tail(n);
    const RowVec beta = Dltl.solve(gs_qd.transpose()).transpose();
    const double hp_dot_now =
        gs_q.dot(state.qdot) + beta.dot(tau - bias);
    qp.A.row(i).head(n) = dt * beta;
    if (sl.delta_col[i] >= 0) qp.A(i, n + sl.delta_col[i]) = 1.0;
    qp.b(i) = -aux[i].gamma_prime(aux[i].value) - hp_dot_now;
  }
  qp.A.block(m, n, K.rows(), sl.num_slacks) = -K;
  // -2 tau' u' + gamma_u(h_u) >= 0, never slacked.
  qp.A.row(rows - 1).head(n) = -2.0 * tau.transpose();
  qp.b(rows - 1) = -gamma_u(h_u);
  return qp;
}

inline ControllerOutput extract_controller_output(
    const std::vector<EsbTask>& tasks, const QpProblem& qp,
    QpSolution solution) {
  const auto sl = detail::slack_layout(tasks);
  ControllerOutput out;
  out.u = solution.z_star.segment(qp.layout.u_offset, qp.layout.u_size);
  out.delta = Vec::Zero(static_cast<Eigen::Index>(tasks.size()));
  for (size_t i = 0; i < tasks.size(); ++i)
    if (sl.delta_col[i] >= 0)
      out.delta(static_cast<Eigen::Index>(i)) =
          solution.z_star(qp.layout.delta_offset + sl.delta_col[i]);
  if (qp.layout.v_size > 0)
    out.v = solution.z_star.segment(qp.layout.v_offset, qp.layout.v_size);
  else
    out.v = Vec::Zero(0);
  out.qp_solution = std::move(solution);
  return out;
}

// --- Stack switching ---------------------------------------------------------

enum class SwitchProfile { Linear, Smoothstep };

struct SwitchSchedule {
  StackSpec stack_a;  // outgoing stack (weight s)
  StackSpec stack_b;  // incoming stack (weight 1 - s)
  double T = 0.5;     // switch duration, seconds
  SwitchProfile s_profile = SwitchProfile::Linear;

  // s(t): 1 before the switch, 0 after, continuous in between.
  double s(double t) const {
    if (!(T > 0.0)) throw std::invalid_argument("SwitchSchedule: T must be positive");
    const double x = std::clamp(t / T, 0.0, 1.0);
    if (s_profile == SwitchProfile::Linear) return 1.0 - x;
    return 1.0 - x * x * (3.0 - 2.0 * x);
  }
};

inline Vec switching_controller(const Vec& u1, const Vec& u2, double t,
                                const SwitchSchedule& schedule) {
  if (u1.size() != u2.size())
    throw std::invalid_argument("switching_controller: dimension mismatch");
  const double s = schedule.s(t);
  return s * u1 + (1.0 - s) * u2;
}

// Convexity of the blended slacks Delta(s) = s delta1 + (1-s) delta2 keeps any
// strict ordering shared by both endpoints. Returns nullopt when the
// precondition (same strict order in both solutions) does not hold.
inline std::optional<bool> delta_ordering_preserved(const Vec& delta1,
                                                    const Vec& delta2, int i,
                                                    int j) {
  if (i < 0 || j < 0 || i >= delta1.size() || j >= delta1.size() ||
      delta1.size() != delta2.size())
    throw std::invalid_argument("delta_ordering_preserved: bad indices");
  if (!(delta1(i) < delta1(j) && delta2(i) < delta2(j))) return std::nullopt;
  for (int k = 0; k <= 1000; ++k) {
    const double s = k / 1000.0;
    const double di = s * delta1(i) + (1.0 - s) * delta2(i);
    const double dj = s * delta1(j) + (1.0 - s) * delta2(j);
    if (!(di < dj)) return false;
  }
  return true;
}

}  // namespace esb
