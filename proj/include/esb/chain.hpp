#pragma once

// Planar N-link serial chain: forward kinematics of link endpoints and
// orientations, task Jacobians, and second derivatives of the task maps.

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace esb {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

struct LinkChain {
  Vec link_lengths;            // m, one per link
  Vec link_masses;             // kg
  Vec joint_viscous_friction;  // N*m*s/rad
  Eigen::Vector2d gravity_accel{0.0, 0.0};

  int dof() const { return static_cast<int>(link_lengths.size()); }

  static LinkChain uniform(int n, double length, double mass = 1.0,
                           double friction = 0.0) {
    LinkChain c;
    c.link_lengths = Vec::Constant(n, length);
    c.link_masses = Vec::Constant(n, mass);
    c.joint_viscous_friction = Vec::Constant(n, friction);
    c.validate();
    return c;
  }

  void validate() const {
    const auto n = link_lengths.size();
    if (n < 1) throw std::invalid_argument("LinkChain: need at least one link");
    if (link_masses.size() != n || joint_viscous_friction.size() != n)
      throw std::invalid_argument("LinkChain: inconsistent vector sizes");
    if ((link_lengths.array() <= 0.0).any())
      throw std::invalid_argument("LinkChain: link lengths must be positive");
    if ((link_masses.array() <= 0.0).any())
      throw std::invalid_argument("LinkChain: link masses must be positive");
    if ((joint_viscous_friction.array() < 0.0).any())
      throw std::invalid_argument("LinkChain: friction must be nonnegative");
  }
};

struct RobotState {
  Vec q;
  Vec qdot;

  RobotState() = default;
  RobotState(Vec q_, Vec qdot_) : q(std::move(q_)), qdot(std::move(qdot_)) {
    if (q.size() != qdot.size())
      throw std::invalid_argument("RobotState: q/qdot size mismatch");
  }
};

// Selects the task map sigma = k(q).
struct FrameSelector {
  enum class Kind {
    LinkPoint,        // endpoint of link `index` (1-based), sigma in R^2
    LinkOrientation,  // cumulative orientation of link `index`, scalar
    Joint,            // single joint coordinate `index` (1-based), scalar
    JointVector       // sigma = q (identity task map), used e.g. for
                      // Cartesian robots whose configuration is the task
  };
  Kind kind = Kind::LinkPoint;
  int index = 0;

  static FrameSelector link_point(int k) { return {Kind::LinkPoint, k}; }
  static FrameSelector link_orientation(int k) {
    return {Kind::LinkOrientation, k};
  }
  static FrameSelector joint(int k) { return {Kind::Joint, k}; }
  static FrameSelector joint_vector() { return {Kind::JointVector, 0}; }

  int dim(int dof) const {
    switch (kind) {
      case Kind::LinkPoint: return 2;
      case Kind::LinkOrientation: return 1;
      case Kind::Joint: return 1;
      case Kind::JointVector: return dof;
    }
    return 0;
  }

  void check(int dof) const {
    if (kind == Kind::JointVector) return;
    if (index < 1 || index > dof)
      throw std::out_of_range("FrameSelector: link/joint index out of range");
  }
};

namespace detail {
// Cumulative joint angles theta_j = q_1 + ... + q_j.
inline Vec cumulative_angles(const Vec& q) {
  Vec theta(q.size());
  double acc = 0.0;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    acc += q[i];
    theta[i] = acc;
  }
  return theta;
}

// Position of a point at distance `s` along link k (s = full length for the
// endpoint, half length for the center of mass).
inline Eigen::Vector2d chain_point(const LinkChain& chain, const Vec& theta,
                                   int k, double s_last) {
  Eigen::Vector2d p{0.0, 0.0};
  for (int j = 0; j < k - 1; ++j) {
    p.x() += chain.link_lengths[j] * std::cos(theta[j]);
    p.y() += chain.link_lengths[j] * std::sin(theta[j]);
  }
  p.x() += s_last * std::cos(theta[k - 1]);
  p.y() += s_last * std::sin(theta[k - 1]);
  return p;
}

// Jacobian of chain_point with respect to q.
inline Mat chain_point_jacobian(const LinkChain& chain, const Vec& theta,
                                int k, double s_last) {
  const int n = chain.dof();
  Mat J = Mat::Zero(2, n);
  for (int i = 0; i < k; ++i) {
    double jx = 0.0, jy = 0.0;
    for (int j = i; j < k; ++j) {
      const double len = (j == k - 1) ? s_last : chain.link_lengths[j];
      jx -= len * std::sin(theta[j]);
      jy += len * std::cos(theta[j]);
    }
    J(0, i) = jx;
    J(1, i) = jy;
  }
  return J;
}

// Second derivatives: H[c](i,a) = d^2 p_c / (dq_i dq_a).
inline std::vector<Mat> chain_point_hessian(const LinkChain& chain,
                                            const Vec& theta, int k,
                                            double s_last) {
  const int n = chain.dof();
  std::vector<Mat> H(2, Mat::Zero(n, n));
  for (int i = 0; i < k; ++i) {
    for (int a = 0; a < k; ++a) {
      double hx = 0.0, hy = 0.0;
      for (int j = std::max(i, a); j < k; ++j) {
        const double len = (j == k - 1) ? s_last : chain.link_lengths[j];
        hx -= len * std::cos(theta[j]);
        hy -= len * std::sin(theta[j]);
      }
      H[0](i, a) = hx;
      H[1](i, a) = hy;
    }
  }
  return H;
}
}  // namespace detail

inline Vec forward_kinematics(const LinkChain& chain, const Vec& q,
                              const FrameSelector& sel) {
  sel.check(chain.dof());
  const Vec theta = detail::cumulative_angles(q);
  switch (sel.kind) {
    case FrameSelector::Kind::LinkPoint:
      return detail::chain_point(chain, theta, sel.index,
                                 chain.link_lengths[sel.index - 1]);
    case FrameSelector::Kind::LinkOrientation: {
      Vec s(1);
      s[0] = theta[sel.index - 1];
      return s;
    }
    case FrameSelector::Kind::Joint: {
      Vec s(1);
      s[0] = q[sel.index - 1];
      return s;
    }
    case FrameSelector::Kind::JointVector:
      return q;
  }
  throw std::logic_error("unreachable");
}

inline Mat task_jacobian(const LinkChain& chain, const Vec& q,
                         const FrameSelector& sel) {
  sel.check(chain.dof());
  const int n = chain.dof();
  const Vec theta = detail::cumulative_angles(q);
  switch (sel.kind) {
    case FrameSelector::Kind::LinkPoint:
      return detail::chain_point_jacobian(chain, theta, sel.index,
                                          chain.link_lengths[sel.index - 1]);
    case FrameSelector::Kind::LinkOrientation: {
      Mat J = Mat::Zero(1, n);
      J.leftCols(sel.index).setOnes();
      return J;
    }
    case FrameSelector::Kind::Joint: {
      Mat J = Mat::Zero(1, n);
      J(0, sel.index - 1) = 1.0;
      return J;
    }
    case FrameSelector::Kind::JointVector:
      return Mat::Identity(n, n);
  }
  throw std::logic_error("unreachable");
}

// Hessians of each component of the task map; zero for the affine selectors.
inline std::vector<Mat> task_map_hessian(const LinkChain& chain, const Vec& q,
                                         const FrameSelector& sel) {
  sel.check(chain.dof());
  const int n = chain.dof();
  if (sel.kind == FrameSelector::Kind::LinkPoint) {
    const Vec theta = detail::cumulative_angles(q);
    return detail::chain_point_hessian(chain, theta, sel.index,
                                       chain.link_lengths[sel.index - 1]);
  }
  const int m = sel.dim(n);
  return std::vector<Mat>(m, Mat::Zero(n, n));
}

}  // namespace esb
