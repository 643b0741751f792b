#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "comadice/mamdp.hpp"
#include "comadice/policy.hpp"

namespace comadice {

struct Transition {
  int s = 0;
  std::vector<int> obs;
  JointAction a;
  double r = 0.0;
  int s_next = 0;
  std::vector<int> obs_next;
  bool terminal = false;    // s_next is absorbing
  bool is_initial = false;  // first transition of a trajectory

  bool operator==(const Transition& o) const {
    return s == o.s && obs == o.obs && a.flat == o.a.flat && r == o.r && s_next == o.s_next &&
           obs_next == o.obs_next && terminal == o.terminal && is_initial == o.is_initial;
  }
};

struct DatasetMeta {
  std::string env_spec;
  std::string policy;  // behavior-policy descriptor
  std::uint64_t seed = 0;
  int n_agents = 0;
  std::vector<int> actions_per_agent;
  int horizon = 0;
  std::size_t n_trajectories = 0;
  std::size_t n_transitions = 0;
  double return_mean = 0.0;  // undiscounted per-trajectory return
  double return_std = 0.0;

  bool operator==(const DatasetMeta&) const = default;
};

struct OfflineDataset {
  DatasetMeta meta;
  std::vector<Transition> transitions;

  /// Indices of transitions flagged as trajectory starts.
  std::vector<std::size_t> initial_indices() const;
  /// Throws if meta counts disagree with the content.
  void validate() const;
};

/// Rolls out `n_traj` trajectories of at most `horizon` steps. Trajectory k
/// draws from its own stream derived from (seed, k). A trajectory that starts
/// in an absorbing state records one absorbing self-transition.
OfflineDataset generate_dataset(const MultiAgentMDP& env, const LocalPolicySet& behavior,
                                int n_traj, int horizon, std::uint64_t seed,
                                std::string_view policy_descriptor = "custom");

/// (1 - eps) * expert + eps * uniform, per agent and observation.
LocalPolicySet mixture_behavior(const LocalPolicySet& expert, double epsilon);

/// Behavior policy from a descriptor: `uniform`, `expert`, `mix:<eps>`
/// (eps-mixture of expert and uniform) or `file:<policy-path>`.
LocalPolicySet make_behavior(const MultiAgentMDP& env, std::string_view descriptor);

/// Line 1: `COMADICE-DS v1 <json>`; then one transition per line:
/// `s obs[0..n) a_flat r s_next obs_next[0..n) terminal is_initial`.
std::string serialize_dataset(const OfflineDataset& ds);
void save_dataset(const OfflineDataset& ds, const std::string& path);
OfflineDataset load_dataset(const std::string& path);

}  // namespace comadice
