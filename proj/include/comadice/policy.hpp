#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "comadice/mamdp.hpp"
#include "comadice/rng.hpp"

namespace comadice {

/// Per-agent categorical policies pi_i(a_i | o_i). Table i is
/// (n_actions_i x n_obs_i); every column is a distribution.
struct LocalPolicySet {
  std::vector<Eigen::MatrixXd> tables;

  static LocalPolicySet uniform(const MultiAgentMDP& env);
  /// One-hot on `actions[i][o]` for every agent and observation.
  static LocalPolicySet deterministic(const MultiAgentMDP& env,
                                      const std::vector<std::vector<int>>& actions);

  int n_agents() const { return static_cast<int>(tables.size()); }
  double prob(int agent, int obs, int action) const { return tables[agent](action, obs); }

  /// Distribution at (agent, obs) restricted to available actions and
  /// renormalized. An empty mask means every action is available.
  Eigen::VectorXd distribution(int agent, int obs, std::span<const char> available = {}) const;
  int sample(int agent, int obs, Rng& rng) const;

  /// Throws unless every column is non-negative and sums to 1 within 1e-9.
  void validate() const;
  /// Checks the table shapes against an environment.
  void check_compatible(const MultiAgentMDP& env) const;
};

/// pi_tot(a | s) = prod_i pi_i(a_i | Z_i(s)); (n_states x n_joint).
Eigen::MatrixXd joint_policy(const MultiAgentMDP& env, const LocalPolicySet& locals);

struct EvalResult {
  double mean = 0.0;  // discounted
  double std = 0.0;
  double undiscounted_mean = 0.0;
  double undiscounted_std = 0.0;
};

/// Monte Carlo returns over seeded rollouts (episode k uses stream k).
EvalResult evaluate(const MultiAgentMDP& env, const LocalPolicySet& locals, int episodes,
                    int horizon, std::uint64_t seed);

void save_policy(const LocalPolicySet& policy, const std::string& path);
LocalPolicySet load_policy(const std::string& path);

}  // namespace comadice
