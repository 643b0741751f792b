#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "comadice/dataset.hpp"
#include "comadice/fdiv.hpp"
#include "comadice/nets.hpp"
#include "comadice/policy.hpp"
#include "comadice/trainer.hpp"

namespace comadice {

/// Probabilities below this floor are clamped before taking logs.
inline constexpr double kLogFloor = 1e-12;

/// w* for every transition of the dataset, in order.
std::vector<double> dataset_ratios(const OfflineDataset& ds, const DiceParams& p, double alpha,
                                   const FDivergence& div);

/// Softmax policy head of one agent: logits = net(o).
struct PolicyNet {
  int agent = 0;
  IndexNet net;

  Eigen::VectorXd probs(int obs) const;
  /// Column-per-observation probability table.
  Eigen::MatrixXd table() const;
};

/// -sum_k w_k log pi_i(a_i,k | o_i,k), logs clamped below at log(1e-12).
/// Throws std::invalid_argument when weights and transitions differ in length
/// or a weight is negative.
double loss_wbc(const PolicyNet& pi, const std::vector<const Transition*>& batch,
                const std::vector<double>& weights);
/// Gradient of loss_wbc with respect to pi.net.params().
Eigen::VectorXd grad_wbc(const PolicyNet& pi, const std::vector<const Transition*>& batch,
                         const std::vector<double>& weights);

/// pi_i(a | o) proportional to the summed weight of samples with (o_i = o, a_i = a);
/// observations with no weight get the uniform distribution.
Eigen::MatrixXd tabular_wbc_closed_form(const OfflineDataset& ds, const std::vector<double>& weights,
                                        int agent, int n_obs, int n_actions);

/// sum_k w_k log pi_tot(a_k | s_k) for a product policy (logs clamped as above).
double global_wbc_objective(const OfflineDataset& ds, const std::vector<double>& weights,
                            const LocalPolicySet& locals);
/// sum_k w_k log pi_i(a_i,k | o_i,k) for one agent.
double local_wbc_objective(const OfflineDataset& ds, const std::vector<double>& weights,
                           const LocalPolicySet& locals, int agent);

enum class PolicySolver { Auto, ClosedForm, Gradient };
PolicySolver parse_policy_solver(std::string_view token);
std::string policy_solver_token(PolicySolver s);

struct PolicyConfig {
  Backend backend = Backend::Tabular;
  int hidden = 32;
  double lr = 1e-4;
  int steps = 1000;
  int batch_size = 128;  // 0 = full dataset
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  PolicySolver solver = PolicySolver::Auto;  // Auto: closed form for the tabular backend
};

/// Weighted behavioral cloning of every agent. The gradient solver minimizes
/// the batch mean of loss_wbc; agent i draws batches from its own seed stream.
LocalPolicySet train_policies(const OfflineDataset& ds, const std::vector<double>& weights,
                              const MultiAgentMDP& env, const PolicyConfig& cfg);

}  // namespace comadice
