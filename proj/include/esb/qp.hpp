#pragma once

// Dense convex QP:  min 1/2 z'Hz + c'z  s.t.  A z >= b,
// solved with a dual active-set method (Goldfarb-Idnani scheme, direct
// factorizations; problems here are small and dense). Deterministic: the
// most violated constraint is added, ties broken on the lowest index.

#include <Eigen/Dense>
#include <limits>
#include <stdexcept>
#include <vector>

#include "esb/chain.hpp"

namespace esb {

struct VarLayout {
  int u_offset = 0, u_size = 0;
  int delta_offset = 0, delta_size = 0;
  int v_offset = 0, v_size = 0;
};

struct QpProblem {
  Mat H;  // symmetric positive definite after assembly regularization
  Vec c;
  Mat A;  // p x n, constraints A z >= b
  Vec b;
  VarLayout layout;

  int num_vars() const { return static_cast<int>(H.rows()); }
  int num_constraints() const { return static_cast<int>(A.rows()); }
};

enum class QpStatus { Optimal, MaxIter, Infeasible };

struct KktResiduals {
  double stationarity = 0.0;
  double primal = 0.0;          // worst constraint violation, >= 0
  double dual = 0.0;            // worst multiplier negativity, >= 0
  double complementarity = 0.0;
};

struct QpSolution {
  Vec z_star;
  Vec multipliers;              // one per constraint, zero when inactive
  std::vector<int> active_set;  // indices with a_i z - b_i <= activity_tol
  QpStatus status = QpStatus::Optimal;
  KktResiduals kkt_residuals;
};

struct SolverConfig {
  double feasibility_tol = 1e-9;
  double activity_tol = 1e-8;
  int max_iter = 0;  // 0 -> derived from problem size
};

inline KktResiduals kkt_residual(const QpProblem& problem,
                                 const QpSolution& solution) {
  KktResiduals r;
  const Vec grad = problem.H * solution.z_star + problem.c -
                   problem.A.transpose() * solution.multipliers;
  r.stationarity = grad.size() ? grad.cwiseAbs().maxCoeff() : 0.0;
  if (problem.num_constraints() > 0) {
    const Vec slack = problem.A * solution.z_star - problem.b;
    r.primal = std::max(0.0, -slack.minCoeff());
    r.dual = std::max(0.0, -solution.multipliers.minCoeff());
    r.complementarity =
        slack.cwiseProduct(solution.multipliers).cwiseAbs().maxCoeff();
  }
  return r;
}

inline QpSolution solve_qp(const QpProblem& problem,
                           const SolverConfig& config = {}) {
  const int n = problem.num_vars();
  const int p = problem.num_constraints();
  if (problem.c.size() != n || problem.A.cols() != n || problem.b.size() != p)
    throw std::invalid_argument("solve_qp: inconsistent dimensions");

  const Mat H = 0.5 * (problem.H + problem.H.transpose());
  Eigen::LLT<Mat> hllt(H);
  if (hllt.info() != Eigen::Success)
    throw std::invalid_argument("solve_qp: cost matrix not positive definite");

  const int max_iter =
      config.max_iter > 0 ? config.max_iter : 100 + 20 * (n + p);

  QpSolution sol;
  sol.z_star = hllt.solve(-problem.c);
  sol.multipliers = Vec::Zero(p);

  std::vector<int> work;      // active working set, in insertion order
  std::vector<double> lam;    // multipliers of the working set
  const double inf = std::numeric_limits<double>::infinity();

  auto finish = [&](QpStatus status) {
    sol.status = status;
    for (size_t k = 0; k < work.size(); ++k)
      sol.multipliers[work[k]] = lam[k];
    sol.active_set.clear();
    for (int i = 0; i < p; ++i) {
      const double s = problem.A.row(i).dot(sol.z_star) - problem.b[i];
      if (s <= config.activity_tol) sol.active_set.push_back(i);
    }
    sol.kkt_residuals = kkt_residual(problem, sol);
    return sol;
  };

  // L from H = L L'.  Step directions come from a QR factorization of
  // L^-1 Aw' (recomputed per iteration; problems here are small): with
  // L^-1 Aw' = Q R, the primal direction for a candidate row a is
  // d = L^-T Q2 Q2' L^-1 a' (orthogonal-complement projection, no
  // near-singular solves) and the dual direction is r = R1^-1 Q1' L^-1 a'.
  const Mat L = hllt.matrixL();

  int iter = 0;
  while (true) {
    if (++iter > max_iter) return finish(QpStatus::MaxIter);

    // Most violated inactive constraint (lowest index on ties).
    int viol = -1;
    double worst = -config.feasibility_tol;
    for (int i = 0; i < p; ++i) {
      bool in_work = false;
      for (int w : work)
        if (w == i) { in_work = true; break; }
      if (in_work) continue;
      const double s = problem.A.row(i).dot(sol.z_star) - problem.b[i];
      if (s < worst) {
        worst = s;
        viol = i;
      }
    }
    if (viol < 0) return finish(QpStatus::Optimal);

    const RowVec a = problem.A.row(viol);
    double lam_new = 0.0;

    while (true) {
      if (++iter > max_iter) return finish(QpStatus::MaxIter);

      const int m = static_cast<int>(work.size());
      const Vec v = L.triangularView<Eigen::Lower>().solve(a.transpose());

      Vec r(m), d;
      double q_step;  // a . d >= 0 by construction
      if (m == 0) {
        d = L.transpose().triangularView<Eigen::Upper>().solve(v);
        q_step = v.squaredNorm();
      } else {
        Mat B(n, m);
        for (int k = 0; k < m; ++k)
          B.col(k) = L.triangularView<Eigen::Lower>().solve(
              problem.A.row(work[k]).transpose());
        Eigen::HouseholderQR<Mat> qr(B);
        const Mat Q = qr.householderQ();
        const Mat R = qr.matrixQR().topRows(m).triangularView<Eigen::Upper>();
        const Vec qtv = Q.transpose() * v;
        r = R.triangularView<Eigen::Upper>().solve(qtv.head(m));
        const Vec d2 = qtv.tail(n - m);
        d = L.transpose().triangularView<Eigen::Upper>().solve(
            Q.rightCols(n - m) * d2);
        q_step = d2.squaredNorm();
      }

      // Dual blocking step.
      double t2 = inf;
      int block = -1;
      for (int k = 0; k < m; ++k) {
        if (r[k] > 1e-12) {
          const double ratio = lam[k] / r[k];
          if (ratio < t2) {
            t2 = ratio;
            block = k;
          }
        }
      }

      // Candidate row (numerically) dependent on the working set: the
      // primal cannot move toward feasibility, only the dual can.
      if (q_step <= 1e-12 * std::max(1.0, v.squaredNorm())) {
        if (block < 0) return finish(QpStatus::Infeasible);
        for (int k = 0; k < m; ++k) lam[k] -= t2 * r[k];
        lam_new += t2;
        work.erase(work.begin() + block);
        lam.erase(lam.begin() + block);
        continue;
      }

      const double s_p = a.dot(sol.z_star) - problem.b[viol];
      const double t1 = -s_p / q_step;
      const double t = std::min(t1, t2);

      sol.z_star += t * d;
      for (int k = 0; k < m; ++k) lam[k] -= t * r[k];
      lam_new += t;

      if (t2 < t1) {
        work.erase(work.begin() + block);
        lam.erase(lam.begin() + block);
        continue;
      }
      work.push_back(viol);
      lam.push_back(lam_new);
      break;
    }
  }
}

}  // namespace esb
