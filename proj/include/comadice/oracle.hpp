#pragma once

#include <Eigen/Dense>

#include "comadice/dataset.hpp"
#include "comadice/fdiv.hpp"
#include "comadice/mamdp.hpp"

namespace comadice {

/// Discounted state-action visitation, (n_states x n_joint), normalized by
/// (1 - gamma) so that it sums to one.
struct OccupancyMeasure {
  Eigen::MatrixXd rho;

  double total() const { return rho.sum(); }
};

/// Pairs with behavior mass below this are outside the support.
inline constexpr double kSupportFloor = 1e-12;

/// Exact occupancy of a joint policy (n_states x n_joint) by a sparse direct
/// solve of d = (1 - gamma) p0 + gamma P_pi^T d.
OccupancyMeasure occupancy_measure(const MultiAgentMDP& env, const Eigen::MatrixXd& joint_pi);

/// pi(a | s) = rho(s, a) / sum_a rho(s, a); uniform where the row has no mass.
Eigen::MatrixXd policy_from_occupancy(const Eigen::MatrixXd& rho);

/// E_rho[r] / (1 - gamma).
double policy_return(const MultiAgentMDP& env, const Eigen::MatrixXd& joint_pi);
double occupancy_return(const MultiAgentMDP& env, const OccupancyMeasure& rho);

/// Optimal centralized values by policy iteration (exact policy evaluation).
Eigen::VectorXd optimal_values(const MultiAgentMDP& env);
double optimal_return(const MultiAgentMDP& env);

/// max_s |sum_a rho(s,a) - (1-gamma) p0(s) - gamma sum_{s',a'} rho(s',a') P(s|s',a')|
double check_flow(const Eigen::MatrixXd& rho, const MultiAgentMDP& env);

enum class VisitWeighting { Uniform, Discounted };

/// Empirical (s, joint a) visitation of a dataset. `Discounted` weights the
/// t-th step of each trajectory by gamma^t before normalizing.
OccupancyMeasure empirical_occupancy(const OfflineDataset& ds, const MultiAgentMDP& env,
                                     VisitWeighting weighting = VisitWeighting::Uniform);

double total_variation(const Eigen::MatrixXd& p, const Eigen::MatrixXd& q);

/// Regularized objective E_rho[r] - alpha * sum rho_mu f(rho / rho_mu) over
/// the support of rho_mu.
double primal_objective(const MultiAgentMDP& env, const OccupancyMeasure& rho_mu, double alpha,
                        const FDivergence& div, const Eigen::MatrixXd& rho);

/// (1 - gamma) p0 . nu + sum rho_mu alpha f*((r + gamma P nu - nu) / alpha).
/// Writes the gradient when `grad` is non-null.
double dual_objective(const MultiAgentMDP& env, const OccupancyMeasure& rho_mu, double alpha,
                      const FDivergence& div, const Eigen::VectorXd& nu,
                      Eigen::VectorXd* grad = nullptr);

/// Exact advantages r + gamma P nu - nu, (n_states x n_joint).
Eigen::MatrixXd exact_advantage(const MultiAgentMDP& env, const Eigen::VectorXd& nu);

/// w*(A_nu) on the support of rho_mu and zero elsewhere.
Eigen::MatrixXd dual_ratio(const MultiAgentMDP& env, const OccupancyMeasure& rho_mu, double alpha,
                           const FDivergence& div, const Eigen::VectorXd& nu);

struct SolverOptions {
  double tolerance = 1e-9;
  int max_iterations = 100000;
};

struct PrimalSolution {
  Eigen::MatrixXd rho;   // optimum, zero off the support
  double objective = 0.0;
  double kkt_residual = 0.0;
  int iterations = 0;
};

struct DualSolution {
  Eigen::VectorXd nu;
  double value = 0.0;
  double grad_norm = 0.0;  // infinity norm
  int iterations = 0;
};

/// Maximizes the regularized objective over the flow polytope restricted to
/// the support of rho_mu. Primal barrier method with infeasible-start Newton
/// steps; the barrier weight is driven down until its duality-gap bound is
/// below 1e-12. Throws std::runtime_error on non-convergence.
PrimalSolution solve_regularized_primal(const MultiAgentMDP& env, const OccupancyMeasure& rho_mu,
                                        double alpha, const FDivergence& div,
                                        const SolverOptions& opts = {});

/// Minimizes the exact tabular dual over nu in R^{n_states} with damped Newton
/// steps until the gradient infinity norm is below `opts.tolerance`.
DualSolution solve_dual_tabular(const MultiAgentMDP& env, const OccupancyMeasure& rho_mu,
                                double alpha, const FDivergence& div,
                                const SolverOptions& opts = {});

}  // namespace comadice
