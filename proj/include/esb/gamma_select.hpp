#pragma once

// Offline selection of the barrier gains Gamma for torque-bounded execution.
// The semi-infinite program (largest gains keeping every auxiliary barrier
// boundary viable under |tau|_inf <= u_max) is approximated by sampling each
// boundary {h'_j = 0} with root-finding along random rays in state space and
// screening a descending log grid of scalar gain candidates; a candidate is
// accepted when a max-margin torque exists at every sample.

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "esb/chain.hpp"
#include "esb/class_k.hpp"
#include "esb/dynamics.hpp"
#include "esb/qp.hpp"
#include "esb/task.hpp"

namespace esb {

struct GammaSamplingConfig {
  int boundary_samples = 24;  // accepted samples per task boundary
  int grid_points = 25;       // log-spaced gain candidates
  double grid_min = 1e-2;
  double cap = 1e3;
  unsigned seed = 2024;
  double qdot_range = 2.0;    // ray sampling box for joint velocities
};

struct GammaSelectionResult {
  Vec gammas;
  double cap = 0.0;
  int samples_used = 0;
  double min_margin = 0.0;
  bool feasible = false;  // false: no grid point viable, smallest returned
};

namespace detail {

struct BoundarySample {
  RobotState state;
};

inline double hprime_value(const EsbTask& task, const LinkChain& chain,
                           const RobotState& x, double gain) {
  if (task.relative_degree == 1) return task_h(task, chain, x.q, 0.0);
  const double h = task_h(task, chain, x.q, 0.0);
  const RowVec gq = grad_wrt_q(task, chain, x.q, 0.0);
  return gq.dot(x.qdot) + ClassKFunction::linear(gain)(h);
}

// Root-find h'_j = 0 along the segment x0 -> x1 by bisection.
inline bool bisect_boundary(const EsbTask& task, const LinkChain& chain,
                            RobotState x0, RobotState x1, double gain,
                            RobotState& out) {
  double f0 = hprime_value(task, chain, x0, gain);
  double f1 = hprime_value(task, chain, x1, gain);
  if (f0 * f1 > 0.0) return false;
  for (int it = 0; it < 60; ++it) {
    RobotState mid{0.5 * (x0.q + x1.q), 0.5 * (x0.qdot + x1.qdot)};
    const double fm = hprime_value(task, chain, mid, gain);
    if (f0 * fm <= 0.0) {
      x1 = mid;
      f1 = fm;
    } else {
      x0 = mid;
      f0 = fm;
    }
  }
  out = RobotState{0.5 * (x0.q + x1.q), 0.5 * (x0.qdot + x1.qdot)};
  return true;
}

}  // namespace detail

inline GammaSelectionResult select_gammas(const std::vector<EsbTask>& tasks,
                                          const LinkChain& chain, double u_max,
                                          const GammaSamplingConfig& config =
                                              GammaSamplingConfig{}) {
  if (tasks.empty()) throw std::invalid_argument("select_gammas: no tasks");
  if (!(u_max > 0.0))
    throw std::invalid_argument("select_gammas: u_max must be positive");
  if (config.grid_points < 1 || !(config.cap >= config.grid_min))
    throw std::invalid_argument("select_gammas: bad grid");

  const int n = chain.dof();
  const int m = static_cast<int>(tasks.size());

  // Descending log grid of scalar candidates (one grid point when degenerate).
  std::vector<double> grid;
  for (int k = config.grid_points - 1; k >= 0; --k) {
    const double f = config.grid_points == 1
                         ? 1.0
                         : static_cast<double>(k) / (config.grid_points - 1);
    grid.push_back(config.grid_min *
                   std::pow(config.cap / config.grid_min, f));
  }

  GammaSelectionResult best;
  best.cap = config.cap;
  best.gammas = Vec::Constant(m, grid.back());

  for (double gain : grid) {
    std::mt19937 rng(config.seed);
    std::uniform_real_distribution<double> uq(-M_PI, M_PI);
    std::uniform_real_distribution<double> uqd(-config.qdot_range,
                                               config.qdot_range);

    std::vector<detail::BoundarySample> samples;
    for (const auto& task : tasks) {
      int accepted = 0, attempts = 0;
      const int max_attempts = 200 * config.boundary_samples;
      while (accepted < config.boundary_samples && attempts < max_attempts) {
        ++attempts;
        RobotState x0, x1;
        x0.q = Vec::NullaryExpr(n, [&](Eigen::Index) { return uq(rng); });
        x0.qdot = Vec::NullaryExpr(n, [&](Eigen::Index) { return uqd(rng); });
        x1.q = Vec::NullaryExpr(n, [&](Eigen::Index) { return uq(rng); });
        x1.qdot = Vec::NullaryExpr(n, [&](Eigen::Index) { return uqd(rng); });
        RobotState hit;
        if (!detail::bisect_boundary(task, chain, x0, x1, gain, hit)) continue;
        // Discard degenerate boundary points (vanishing barrier gradient).
        if (grad_wrt_q(task, chain, hit.q, 0.0).norm() < 1e-6) continue;
        samples.push_back({hit});
        ++accepted;
      }
      // A boundary with no hits inside the sampling box is vacuously viable
      // for this candidate: states in the box cannot reach it.
    }

    // Per sample: does some |tau|_inf <= u_max keep every barrier viable?
    double worst_margin = std::numeric_limits<double>::infinity();
    bool candidate_ok = true;
    for (const auto& s : samples) {
      const auto dyn = dynamics_terms(chain, s.state);
      const Eigen::LDLT<Mat> Dltl(dyn.D);
      const Vec bias = dyn.C * s.state.qdot + dyn.friction + dyn.g_vec;

      QpProblem qp;
      qp.H = 2.0 * Mat::Identity(n, n);
      qp.c = Vec::Zero(n);
      qp.A = Mat::Zero(m + 2 * n, n);
      qp.b = Vec::Zero(m + 2 * n);
      for (int i = 0; i < m; ++i) {
        // Viability on the sampled boundary is d/dt h' >= 0 (Nagumo); the
        // candidate gain is the inner class-K defining h' itself.
        EsbTask probe = tasks[i];
        probe.gamma = ClassKFunction::linear(gain);
        const auto aux = auxiliary_cbf(probe, chain, s.state, 0.0);
        const RowVec gs_q = aux.grad_state.head(n);
        const RowVec gs_qd = aux.grad_state.tail(n);
        const RowVec beta = Dltl.solve(gs_qd.transpose()).transpose();
        const double alpha = gs_q.dot(s.state.qdot) - beta.dot(bias);
        qp.A.row(i) = beta;
        qp.b(i) = -alpha;
      }
      for (int k = 0; k < n; ++k) {
        qp.A(m + 2 * k, k) = 1.0;
        qp.b(m + 2 * k) = -u_max;
        qp.A(m + 2 * k + 1, k) = -1.0;
        qp.b(m + 2 * k + 1) = -u_max;
      }

      const auto sol = solve_qp(qp);
      if (sol.status != QpStatus::Optimal) {
        candidate_ok = false;
        break;
      }
      const Vec slack = qp.A * sol.z_star - qp.b;
      worst_margin = std::min(worst_margin, slack.head(m).minCoeff());
    }

    if (candidate_ok) {
      best.gammas = Vec::Constant(m, gain);
      best.samples_used = static_cast<int>(samples.size());
      best.min_margin = worst_margin;
      best.feasible = true;
      return best;
    }
    best.samples_used = static_cast<int>(samples.size());
  }

  best.min_margin = -1.0;  // diagnostic: no candidate on the grid was viable
  return best;
}

}  // namespace esb
