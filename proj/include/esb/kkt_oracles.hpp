#pragma once

// Closed-form KKT solutions for the kinematic multi-task QPs, used as
// independent cross-checks of the numerical solver.

#include <Eigen/Dense>
#include <stdexcept>
#include <utility>

#include "esb/chain.hpp"

namespace esb {

struct UnprioritizedKkt {
  Vec qdot;
  Vec delta;  // closed-form slack, sign per the dual convention: the QP's
              // optimal slack variable equals -delta
};

// qdot = -l G' delta,  delta = (I + l G G')^{-1} gamma(h), for the
// unprioritized stack with all task constraints active.
inline UnprioritizedKkt analytic_unprioritized_solution(const Mat& grad_h,
                                                        const Vec& gamma_h,
                                                        double l) {
  if (!(l > 0.0))
    throw std::invalid_argument("analytic_unprioritized_solution: l must be positive");
  const int m = static_cast<int>(grad_h.rows());
  if (gamma_h.size() != m)
    throw std::invalid_argument("analytic_unprioritized_solution: size mismatch");

  const Mat A0 = Mat::Identity(m, m) + l * grad_h * grad_h.transpose();
  UnprioritizedKkt out;
  out.delta = A0.ldlt().solve(gamma_h);
  out.qdot = -l * grad_h.transpose() * out.delta;
  return out;
}

struct PrioritizedKkt {
  Vec multipliers;  // stacked (task rows, priority rows) for the active set
  Vec qdot;
};

// Active-set KKT system of the prioritized QP:
//   A_K = 1/(4l) [[A0, Kbar'], [Kbar, Kbar Kbar']],  A0 = I + l g g',
//   lambda = -1/2 A_K^{-1} [gamma_active; 0],  qdot = 1/2 g' lambda_task.
// Valid when the passed active set matches the solver's. Throws on the
// rank-loss configurations where A_K is singular.
inline PrioritizedKkt prioritized_kkt_oracle(const Mat& grad_h_active,
                                             const Vec& gamma_active,
                                             const Mat& K_active, double l) {
  if (!(l > 0.0))
    throw std::invalid_argument("prioritized_kkt_oracle: l must be positive");
  const int mt = static_cast<int>(grad_h_active.rows());
  const int mp = static_cast<int>(K_active.rows());
  if (gamma_active.size() != mt || (mp > 0 && K_active.cols() != mt))
    throw std::invalid_argument("prioritized_kkt_oracle: size mismatch");

  const Mat A0 =
      Mat::Identity(mt, mt) + l * grad_h_active * grad_h_active.transpose();
  Mat AK(mt + mp, mt + mp);
  AK.topLeftCorner(mt, mt) = A0;
  AK.topRightCorner(mt, mp) = K_active.transpose();
  AK.bottomLeftCorner(mp, mt) = K_active;
  AK.bottomRightCorner(mp, mp) = K_active * K_active.transpose();
  AK /= 4.0 * l;

  Eigen::FullPivLU<Mat> lu(AK);
  if (!lu.isInvertible())
    throw std::runtime_error(
        "prioritized_kkt_oracle: singular KKT system (rank-loss configuration)");

  Vec rhs = Vec::Zero(mt + mp);
  rhs.head(mt) = gamma_active;

  PrioritizedKkt out;
  out.multipliers = -0.5 * lu.solve(rhs);
  out.qdot = 0.5 * grad_h_active.transpose() * out.multipliers.head(mt);
  return out;
}

}  // namespace esb
