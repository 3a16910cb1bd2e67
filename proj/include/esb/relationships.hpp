#pragma once

// Inter-task relationship classification: orthogonality, independence, and
// dependence, both for Jacobian-based tasks and for barrier-gradient pairs.

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>
#include <string>

#include "esb/task.hpp"

namespace esb {

inline constexpr double kDefaultRankTol = 5e-3;

enum class TaskRelationship { Orthogonal, Independent, Dependent };

inline const char* to_string(TaskRelationship r) {
  switch (r) {
    case TaskRelationship::Orthogonal: return "orthogonal";
    case TaskRelationship::Independent: return "independent";
    case TaskRelationship::Dependent: return "dependent";
  }
  return "?";
}

struct RelationshipReport {
  std::pair<std::string, std::string> pair;
  TaskRelationship classification = TaskRelationship::Independent;
  double gradient_angle = 0.0;  // radians, meaningful for gradient pairs
  double rank_tolerance = kDefaultRankTol;
};

namespace detail {
inline int numerical_rank(const Mat& A, double rel_tol) {
  Eigen::JacobiSVD<Mat> svd(A);
  const auto& s = svd.singularValues();
  if (s.size() == 0) return 0;
  const double thresh = rel_tol * s[0];
  int r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s[i] > thresh) ++r;
  return r;
}
}  // namespace detail

// Gradient-based classification of two barrier tasks at a configuration q.
// Requires both gradients nonzero (the definitions assume it).
inline RelationshipReport classify_pair(const EsbTask& task_i,
                                        const EsbTask& task_j,
                                        const LinkChain& chain, const Vec& q,
                                        double t = 0.0,
                                        double rank_tol = kDefaultRankTol) {
  const RowVec gi = grad_wrt_q(task_i, chain, q, t);
  const RowVec gj = grad_wrt_q(task_j, chain, q, t);
  const double ni = gi.norm(), nj = gj.norm();
  if (ni == 0.0 || nj == 0.0)
    throw std::domain_error("classify_pair: zero task gradient at q");

  RelationshipReport rep;
  rep.pair = {task_i.id, task_j.id};
  rep.rank_tolerance = rank_tol;
  const double cosang = std::clamp(gi.dot(gj) / (ni * nj), -1.0, 1.0);
  rep.gradient_angle = std::acos(cosang);

  Mat stacked(q.size(), 2);
  stacked.col(0) = gi.transpose();
  stacked.col(1) = gj.transpose();
  const int rank = detail::numerical_rank(stacked, rank_tol);

  if (std::abs(gi.dot(gj)) <= rank_tol * ni * nj)
    rep.classification = TaskRelationship::Orthogonal;
  else if (rank < 2)
    rep.classification = TaskRelationship::Dependent;
  else
    rep.classification = TaskRelationship::Independent;
  return rep;
}

// Jacobian-based classification (Table-style tests via singular values).
inline RelationshipReport classify_pair_jacobian(
    const Mat& J_i, const Mat& J_j, double rank_tol = kDefaultRankTol) {
  if (J_i.norm() == 0.0 || J_j.norm() == 0.0)
    throw std::domain_error("classify_pair_jacobian: zero Jacobian");

  RelationshipReport rep;
  rep.rank_tolerance = rank_tol;

  const Mat prod = J_i * J_j.transpose();
  if (prod.norm() <= rank_tol * J_i.norm() * J_j.norm()) {
    rep.classification = TaskRelationship::Orthogonal;
    rep.gradient_angle = M_PI / 2.0;
    return rep;
  }

  Mat stacked(J_i.cols(), J_i.rows() + J_j.rows());
  stacked.leftCols(J_i.rows()) = J_i.transpose();
  stacked.rightCols(J_j.rows()) = J_j.transpose();
  const int ri = detail::numerical_rank(J_i, rank_tol);
  const int rj = detail::numerical_rank(J_j, rank_tol);
  const int rs = detail::numerical_rank(stacked, rank_tol);
  rep.classification = (rs < ri + rj) ? TaskRelationship::Dependent
                                      : TaskRelationship::Independent;
  return rep;
}

}  // namespace esb
