#pragma once

// Lagrangian dynamics of the planar chain with uniform thin-rod links:
// inertia matrix, Christoffel Coriolis matrix, gravity and viscous friction
// torques, plus the control-affine state-space form.

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "esb/chain.hpp"

namespace esb {

struct DynamicsTerms {
  Mat D;         // inertia matrix
  Mat C;         // Coriolis/centrifugal matrix (Christoffel construction)
  Vec g_vec;     // gravity torques
  Vec friction;  // viscous friction torques F_v * qdot
};

struct ControlAffineForm {
  Vec f;      // drift, dimension 2N
  Mat g_mat;  // input matrix, 2N x N
};

namespace detail {

// Inertia matrix and its configuration gradient. Each link is a uniform rod:
// mass at the midpoint, rotational inertia m l^2 / 12 about the center.
inline void inertia_and_gradient(const LinkChain& chain, const Vec& q, Mat* D,
                                 std::vector<Mat>* dD_dq) {
  const int n = chain.dof();
  const Vec theta = cumulative_angles(q);
  *D = Mat::Zero(n, n);
  if (dD_dq) dD_dq->assign(n, Mat::Zero(n, n));

  for (int j = 1; j <= n; ++j) {
    const double m = chain.link_masses[j - 1];
    const double len = chain.link_lengths[j - 1];
    const double inertia_com = m * len * len / 12.0;

    const Mat Jv = chain_point_jacobian(chain, theta, j, 0.5 * len);
    Mat Jw = Mat::Zero(1, n);
    Jw.leftCols(j).setOnes();

    *D += m * Jv.transpose() * Jv + inertia_com * Jw.transpose() * Jw;

    if (dD_dq) {
      const std::vector<Mat> Hv = chain_point_hessian(chain, theta, j, 0.5 * len);
      for (int a = 0; a < n; ++a) {
        // dJv/dq_a has rows Hv[0].row(a) and Hv[1].row(a) (Hessian symmetry).
        Mat dJv(2, n);
        dJv.row(0) = Hv[0].row(a);
        dJv.row(1) = Hv[1].row(a);
        (*dD_dq)[a] += m * (dJv.transpose() * Jv + Jv.transpose() * dJv);
      }
    }
  }
}

}  // namespace detail

inline DynamicsTerms dynamics_terms(const LinkChain& chain,
                                    const RobotState& state) {
  const int n = chain.dof();
  if (state.q.size() != n || state.qdot.size() != n)
    throw std::invalid_argument("dynamics_terms: state dimension mismatch");

  DynamicsTerms out;
  std::vector<Mat> dD;
  detail::inertia_and_gradient(chain, state.q, &out.D, &dD);

  // Christoffel symbols of the first kind:
  //   c_{kji} = 1/2 (dD_kj/dq_i + dD_ki/dq_j - dD_ij/dq_k)
  // so that Ddot - 2C is skew-symmetric.
  out.C = Mat::Zero(n, n);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j) {
      double ckj = 0.0;
      for (int i = 0; i < n; ++i)
        ckj += 0.5 *
               (dD[i](k, j) + dD[j](k, i) - dD[k](i, j)) * state.qdot[i];
      out.C(k, j) = ckj;
    }

  // Gravity: U = -sum_j m_j g.p_cj, g_vec = dU/dq.
  const Vec theta = detail::cumulative_angles(state.q);
  out.g_vec = Vec::Zero(n);
  for (int j = 1; j <= n; ++j) {
    const Mat Jv = detail::chain_point_jacobian(
        chain, theta, j, 0.5 * chain.link_lengths[j - 1]);
    out.g_vec -= chain.link_masses[j - 1] * Jv.transpose() *
                 chain.gravity_accel;
  }

  out.friction = chain.joint_viscous_friction.asDiagonal() * state.qdot;
  return out;
}

inline Vec forward_dynamics(const LinkChain& chain, const RobotState& state,
                            const Vec& tau) {
  if (tau.size() != chain.dof())
    throw std::invalid_argument("forward_dynamics: tau dimension mismatch");
  const DynamicsTerms t = dynamics_terms(chain, state);
  const Vec rhs = tau - t.C * state.qdot - t.friction - t.g_vec;
  return t.D.ldlt().solve(rhs);
}

inline ControlAffineForm control_affine(const LinkChain& chain,
                                        const RobotState& state) {
  const int n = chain.dof();
  const DynamicsTerms t = dynamics_terms(chain, state);

  Eigen::SelfAdjointEigenSolver<Mat> es(t.D);
  const double lmin = es.eigenvalues().minCoeff();
  const double lmax = es.eigenvalues().maxCoeff();
  if (!(lmin > 0.0) || lmax / lmin > 1e12)
    throw std::runtime_error("control_affine: inertia matrix near singular");

  const Mat Dinv = t.D.ldlt().solve(Mat::Identity(n, n));

  ControlAffineForm out;
  out.f = Vec::Zero(2 * n);
  out.f.head(n) = state.qdot;
  out.f.tail(n) = -Dinv * (t.C * state.qdot + t.friction + t.g_vec);
  out.g_mat = Mat::Zero(2 * n, n);
  out.g_mat.bottomRows(n) = Dinv;
  return out;
}

}  // namespace esb
