#include <cmath>
#include <random>

#include "doctest.h"
#include "esb/chain.hpp"

using namespace esb;

namespace {

Mat fd_jacobian(const LinkChain& chain, const Vec& q,
                const FrameSelector& sel, double eps = 1e-7) {
  const Vec sigma0 = forward_kinematics(chain, q, sel);
  Mat J(sigma0.size(), q.size());
  for (int i = 0; i < q.size(); ++i) {
    Vec qp = q, qm = q;
    qp[i] += eps;
    qm[i] -= eps;
    J.col(i) = (forward_kinematics(chain, qp, sel) -
                forward_kinematics(chain, qm, sel)) /
               (2 * eps);
  }
  return J;
}

}  // namespace

TEST_CASE("forward kinematics of stretched and folded chains") {
  const auto chain = LinkChain::uniform(3, 0.5);

  Vec q = Vec::Zero(3);
  Vec tip = forward_kinematics(chain, q, FrameSelector::link_point(3));
  CHECK(tip(0) == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(tip(1) == doctest::Approx(0.0).epsilon(1e-12));

  q << M_PI / 2, -M_PI / 2, M_PI / 2;
  tip = forward_kinematics(chain, q, FrameSelector::link_point(3));
  CHECK(tip(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(tip(1) == doctest::Approx(1.0).epsilon(1e-12));

  const Vec mid = forward_kinematics(chain, q, FrameSelector::link_point(2));
  CHECK(mid(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(mid(1) == doctest::Approx(0.5).epsilon(1e-12));

  const Vec base = forward_kinematics(chain, q, FrameSelector::link_point(1));
  CHECK(base(0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(base(1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("orientation, joint and joint-vector selectors") {
  const auto chain = LinkChain::uniform(3, 1.0);
  Vec q(3);
  q << 0.3, -0.2, 0.5;

  const Vec th2 =
      forward_kinematics(chain, q, FrameSelector::link_orientation(2));
  CHECK(th2(0) == doctest::Approx(0.1).epsilon(1e-12));

  const Vec j3 = forward_kinematics(chain, q, FrameSelector::joint(3));
  CHECK(j3(0) == doctest::Approx(0.5).epsilon(1e-12));

  const Vec all = forward_kinematics(chain, q, FrameSelector::joint_vector());
  CHECK((all - q).norm() == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("analytic Jacobians agree with finite differences") {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> dist(-M_PI, M_PI);
  const auto chain = LinkChain::uniform(4, 0.7);
  const std::vector<FrameSelector> sels = {
      FrameSelector::link_point(2), FrameSelector::link_point(4),
      FrameSelector::link_orientation(3), FrameSelector::joint(2),
      FrameSelector::joint_vector()};

  for (int trial = 0; trial < 25; ++trial) {
    Vec q = Vec::NullaryExpr(4, [&](Eigen::Index) { return dist(rng); });
    for (const auto& sel : sels) {
      const Mat J = task_jacobian(chain, q, sel);
      const Mat Jfd = fd_jacobian(chain, q, sel);
      const double err = (J - Jfd).lpNorm<Eigen::Infinity>() /
                         (1.0 + J.lpNorm<Eigen::Infinity>());
      CHECK(err < 1e-5);
    }
  }
}

TEST_CASE("distal joints have structurally zero Jacobian columns") {
  const auto chain = LinkChain::uniform(5, 1.0);
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  for (int trial = 0; trial < 10; ++trial) {
    Vec q = Vec::NullaryExpr(5, [&](Eigen::Index) { return dist(rng); });
    for (int k = 1; k <= 4; ++k) {
      const Mat J = task_jacobian(chain, q, FrameSelector::link_point(k));
      CHECK(J.rightCols(5 - k).lpNorm<Eigen::Infinity>() == 0.0);
    }
  }
}

TEST_CASE("task map Hessian matches finite differences of the Jacobian") {
  const auto chain = LinkChain::uniform(3, 0.5);
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> dist(-M_PI, M_PI);
  const double eps = 1e-6;

  for (int trial = 0; trial < 10; ++trial) {
    Vec q = Vec::NullaryExpr(3, [&](Eigen::Index) { return dist(rng); });
    const auto sel = FrameSelector::link_point(3);
    const auto H = task_map_hessian(chain, q, sel);
    for (int a = 0; a < 3; ++a) {
      Vec qp = q, qm = q;
      qp[a] += eps;
      qm[a] -= eps;
      const Mat dJ = (task_jacobian(chain, qp, sel) -
                      task_jacobian(chain, qm, sel)) /
                     (2 * eps);
      for (int comp = 0; comp < 2; ++comp)
        CHECK((H[comp].row(a) - dJ.row(comp)).lpNorm<Eigen::Infinity>() <
              1e-6);
    }
  }
}

TEST_CASE("chain validation rejects malformed descriptions") {
  LinkChain bad;
  bad.link_lengths = Vec::Constant(2, 1.0);
  bad.link_masses = Vec::Constant(1, 1.0);
  bad.joint_viscous_friction = Vec::Zero(2);
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  CHECK_THROWS_AS(LinkChain::uniform(2, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(
      forward_kinematics(LinkChain::uniform(2, 1.0), Vec::Zero(2),
                         FrameSelector::link_point(3)),
      std::out_of_range);
}
