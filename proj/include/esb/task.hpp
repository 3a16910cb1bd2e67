#pragma once

// Extended set-based tasks: a barrier function h(sigma, t) over a task map
// sigma = k(q), together with its gradients and a class-K shaping function.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "esb/chain.hpp"
#include "esb/class_k.hpp"

namespace esb {

struct EsbTask {
  std::string id;
  FrameSelector selector;
  ClassKFunction gamma;
  int relative_degree = 1;  // 1 in the kinematic model, 2 under torque control
  bool safety_critical = false;

  std::function<double(const Vec& sigma, double t)> h;
  std::function<RowVec(const Vec& sigma, double t)> dh_dsigma;
  std::function<double(const Vec& sigma, double t)> dh_dt;
  // Hessian of h in sigma; required by the auxiliary-CBF machinery for
  // relative-degree-2 execution. Affine task maps leave it constant.
  std::function<Mat(const Vec& sigma, double t)> d2h_dsigma2;

  // Tasks whose reference depends on the configuration itself (look-at-point)
  // override value and gradient directly in q.
  std::function<double(const LinkChain&, const Vec& q, double t)> h_in_q;
  std::function<RowVec(const LinkChain&, const Vec& q, double t)> grad_q_in_q;
};

inline Vec task_sigma(const EsbTask& task, const LinkChain& chain,
                      const Vec& q) {
  return forward_kinematics(chain, q, task.selector);
}

inline double task_h(const EsbTask& task, const LinkChain& chain, const Vec& q,
                     double t) {
  if (task.h_in_q) return task.h_in_q(chain, q, t);
  return task.h(task_sigma(task, chain, q), t);
}

// Chain rule: dh/dq = (dh/dsigma) J(q).
inline RowVec grad_wrt_q(const EsbTask& task, const LinkChain& chain,
                         const Vec& q, double t) {
  if (task.grad_q_in_q) return task.grad_q_in_q(chain, q, t);
  const Vec sigma = task_sigma(task, chain, q);
  return task.dh_dsigma(sigma, t) * task_jacobian(chain, q, task.selector);
}

inline double task_dh_dt(const EsbTask& task, const LinkChain& chain,
                         const Vec& q, double t) {
  if (task.h_in_q) return 0.0;  // configuration-dependent reference, no
                                // explicit time dependence
  return task.dh_dt(task_sigma(task, chain, q), t);
}

// --- Task constructors -----------------------------------------------------

// h = -1/2 ||sigma - sigma_d(t)||^2 with a piecewise-C1 reference trajectory.
inline EsbTask goal_point_task(std::string id, FrameSelector selector,
                               std::function<Vec(double)> sigma_d,
                               std::function<Vec(double)> sigma_d_dot,
                               ClassKFunction gamma) {
  gamma.validate();
  EsbTask task;
  task.id = std::move(id);
  task.selector = selector;
  task.gamma = gamma;
  task.h = [sigma_d](const Vec& sigma, double t) {
    const Vec e = sigma - sigma_d(t);
    if (e.size() != sigma.size())
      throw std::invalid_argument("goal_point_task: dimension mismatch");
    return -0.5 * e.squaredNorm();
  };
  task.dh_dsigma = [sigma_d](const Vec& sigma, double t) -> RowVec {
    return -(sigma - sigma_d(t)).transpose();
  };
  task.dh_dt = [sigma_d, sigma_d_dot](const Vec& sigma, double t) {
    return (sigma - sigma_d(t)).dot(sigma_d_dot(t));
  };
  task.d2h_dsigma2 = [](const Vec& sigma, double) -> Mat {
    return -Mat::Identity(sigma.size(), sigma.size());
  };
  return task;
}

inline EsbTask goal_point_task(std::string id, FrameSelector selector,
                               const Vec& target, ClassKFunction gamma) {
  const Vec zero = Vec::Zero(target.size());
  return goal_point_task(
      std::move(id), selector, [target](double) { return target; },
      [zero](double) { return zero; }, gamma);
}

// Joint limits as 2N safety-critical barriers h_i+ = q_i+ - q_i,
// h_i- = q_i - q_i-.
inline std::vector<EsbTask> joint_limit_tasks(const Vec& q_plus,
                                              const Vec& q_minus,
                                              ClassKFunction gamma,
                                              int relative_degree = 1) {
  gamma.validate();
  if (q_plus.size() != q_minus.size())
    throw std::invalid_argument("joint_limit_tasks: bound size mismatch");
  if (((q_plus - q_minus).array() <= 0.0).any())
    throw std::invalid_argument("joint_limit_tasks: crossed bounds");

  std::vector<EsbTask> out;
  for (int i = 0; i < q_plus.size(); ++i) {
    for (int side = 0; side < 2; ++side) {
      const bool upper = (side == 0);
      const double bound = upper ? q_plus[i] : q_minus[i];
      EsbTask task;
      task.id = (upper ? "jl_plus_" : "jl_minus_") + std::to_string(i + 1);
      task.selector = FrameSelector::joint(i + 1);
      task.gamma = gamma;
      task.relative_degree = relative_degree;
      task.safety_critical = true;
      task.h = [bound, upper](const Vec& sigma, double) {
        return upper ? bound - sigma[0] : sigma[0] - bound;
      };
      task.dh_dsigma = [upper](const Vec&, double) -> RowVec {
        RowVec g(1);
        g[0] = upper ? -1.0 : 1.0;
        return g;
      };
      task.dh_dt = [](const Vec&, double) { return 0.0; };
      task.d2h_dsigma2 = [](const Vec&, double) { return Mat::Zero(1, 1); };
      out.push_back(std::move(task));
    }
  }
  return out;
}

// End-effector (or link-k) orientation regulation, h = -1/2 (sigma - theta_d)^2.
inline EsbTask orientation_task(std::string id, int link, double theta_d,
                                ClassKFunction gamma) {
  Vec target(1);
  target[0] = theta_d;
  return goal_point_task(std::move(id), FrameSelector::link_orientation(link),
                         target, gamma);
}

// Align link k with the bearing towards a fixed planar target. The desired
// bearing is recomputed from q at every evaluation and unwrapped to the
// branch nearest the current orientation.
inline EsbTask look_at_point_task(std::string id, int link,
                                  const Eigen::Vector2d& target,
                                  ClassKFunction gamma) {
  gamma.validate();
  EsbTask task;
  task.id = std::move(id);
  task.selector = FrameSelector::link_orientation(link);
  task.gamma = gamma;

  auto base_point = [link](const LinkChain& chain,
                           const Vec& q) -> Eigen::Vector2d {
    if (link == 1) return Eigen::Vector2d::Zero();
    const Vec p = forward_kinematics(chain, q, FrameSelector::link_point(link - 1));
    return {p[0], p[1]};
  };

  auto bearing_error = [base_point, target, link](const LinkChain& chain,
                                                  const Vec& q) {
    const Eigen::Vector2d d = target - base_point(chain, q);
    const double r2 = d.squaredNorm();
    if (r2 < 1e-16)
      throw std::invalid_argument(
          "look_at_point_task: target coincides with the link base");
    double sigma = 0.0;
    for (int j = 0; j < link; ++j) sigma += q[j];
    double b = std::atan2(d.y(), d.x());
    // Unwrap to the branch nearest the current orientation.
    constexpr double two_pi = 2.0 * M_PI;
    b += two_pi * std::round((sigma - b) / two_pi);
    return std::make_pair(sigma - b, d);
  };

  task.h_in_q = [bearing_error](const LinkChain& chain, const Vec& q, double) {
    const double e = bearing_error(chain, q).first;
    return -0.5 * e * e;
  };
  task.grad_q_in_q = [bearing_error, base_point, link](
                         const LinkChain& chain, const Vec& q,
                         double) -> RowVec {
    const auto [e, d] = bearing_error(chain, q);
    const int n = chain.dof();
    RowVec dsigma_dq = RowVec::Zero(n);
    dsigma_dq.head(link).setOnes();
    RowVec db_dq = RowVec::Zero(n);
    if (link > 1) {
      const Mat Jp = task_jacobian(chain, q, FrameSelector::link_point(link - 1));
      // b = atan2(d_y, d_x), d = target - p(q)  =>  db/dq = (d_x d_y' - d_y d_x') / |d|^2
      db_dq = (d.x() * (-Jp.row(1)) - d.y() * (-Jp.row(0))) / d.squaredNorm();
    }
    return -e * (dsigma_dq - db_dq);
  };
  // Used only by generic sigma-space queries; the q-space overrides above are
  // authoritative for this task kind.
  task.h = [](const Vec&, double) -> double {
    throw std::logic_error("look_at_point_task: evaluate through q");
  };
  task.dh_dsigma = [](const Vec&, double) -> RowVec {
    throw std::logic_error("look_at_point_task: evaluate through q");
  };
  task.dh_dt = [](const Vec&, double) { return 0.0; };
  return task;
}

// --- Auxiliary CBF for relative-degree-2 execution --------------------------

struct AuxiliaryCbf {
  double value = 0.0;   // h' = h (degree 1) or hdot + gamma(h) (degree 2)
  RowVec grad_state;    // gradient over x = (q, qdot), dimension 2N
  ClassKFunction gamma_prime;
};

namespace detail {
// d(grad_q h)^T/dq = J^T (d2h/dsigma2) J + sum_l (dh/dsigma)_l Hess(k_l),
// with a finite-difference fallback for tasks lacking an analytic Hessian.
inline Mat grad_q_jacobian(const EsbTask& task, const LinkChain& chain,
                           const Vec& q, double t) {
  const int n = chain.dof();
  if (!task.h_in_q && task.d2h_dsigma2) {
    const Vec sigma = task_sigma(task, chain, q);
    const Mat J = task_jacobian(chain, q, task.selector);
    const RowVec dh = task.dh_dsigma(sigma, t);
    const std::vector<Mat> Hk = task_map_hessian(chain, q, task.selector);
    Mat H = J.transpose() * task.d2h_dsigma2(sigma, t) * J;
    for (int l = 0; l < dh.size(); ++l) H += dh[l] * Hk[l];
    return H;
  }
  Mat H(n, n);
  const double eps = 1e-6;
  for (int i = 0; i < n; ++i) {
    Vec qp = q, qm = q;
    qp[i] += eps;
    qm[i] -= eps;
    H.col(i) = (grad_wrt_q(task, chain, qp, t) -
                grad_wrt_q(task, chain, qm, t)).transpose() /
               (2.0 * eps);
  }
  return H;
}
}  // namespace detail

inline AuxiliaryCbf auxiliary_cbf(const EsbTask& task, const LinkChain& chain,
                                  const RobotState& state, double t = 0.0,
                                  ClassKFunction gamma_prime = {}) {
  const int n = chain.dof();
  AuxiliaryCbf out;
  out.gamma_prime = gamma_prime;
  const RowVec gq = grad_wrt_q(task, chain, state.q, t);

  if (task.relative_degree == 1) {
    out.value = task_h(task, chain, state.q, t);
    out.grad_state = RowVec::Zero(2 * n);
    out.grad_state.head(n) = gq;
    return out;
  }

  const double h = task_h(task, chain, state.q, t);
  out.value = gq.dot(state.qdot) + task.gamma(h);

  const Mat Hq = detail::grad_q_jacobian(task, chain, state.q, t);
  out.grad_state = RowVec::Zero(2 * n);
  out.grad_state.head(n) =
      state.qdot.transpose() * Hq + task.gamma.derivative(h) * gq;
  out.grad_state.tail(n) = gq;
  return out;
}

}  // namespace esb
