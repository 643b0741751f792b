#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "comadice/rng.hpp"

namespace comadice {

using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Big-endian mixed-radix encoding: flat = sum_i a_i * prod_{j>i} radix_j.
int joint_encode(std::span<const int> per_agent, std::span<const int> radices);
std::vector<int> joint_decode(int flat, std::span<const int> radices);
int radix_product(std::span<const int> radices);

struct JointAction {
  std::vector<int> per_agent;
  int flat = 0;

  static JointAction from_flat(int flat, std::span<const int> radices) {
    return {joint_decode(flat, radices), flat};
  }
  static JointAction from_agents(std::vector<int> a, std::span<const int> radices) {
    int flat = joint_encode(a, radices);
    return {std::move(a), flat};
  }
};

/// Tabular cooperative multi-agent MDP with deterministic per-agent
/// observations. Transition rows are indexed by `row(s, a)` = s * n_joint + a.
///
/// Terminal states are absorbing with zero reward; there is no separate done
/// channel.
struct MultiAgentMDP {
  int n_agents = 0;
  int n_states = 0;
  std::vector<int> actions_per_agent;
  SparseRowMatrix transition;   // (n_states * n_joint) x n_states
  Eigen::MatrixXd reward;       // n_states x n_joint
  Eigen::VectorXd initial_dist;
  double discount = 0.9;
  std::vector<std::vector<int>> obs_fn;  // [agent][state] -> observation
  std::vector<int> obs_sizes;
  std::vector<char> terminal;            // per state

  /// Optional per-agent deterministic "expert" action per observation, filled
  /// by constructors that know a good policy. Empty when unknown.
  std::vector<std::vector<int>> reference_actions;
  /// The env-spec string this instance was built from, if any.
  std::string spec;

  int n_joint() const { return radix_product(actions_per_agent); }
  Eigen::Index row(int s, int a) const {
    return static_cast<Eigen::Index>(s) * n_joint() + a;
  }
  bool is_terminal(int s) const { return terminal[static_cast<std::size_t>(s)] != 0; }

  /// Throws std::invalid_argument naming the first violated invariant.
  void validate() const;
};

std::vector<int> observe(const MultiAgentMDP& env, int s);

struct StepResult {
  int next_state = 0;
  double reward = 0.0;
  bool done = false;
};

StepResult step(const MultiAgentMDP& env, int s, int joint_action, Rng& rng);

/// A chain of `n_rounds` identical decision states followed by one terminal
/// state. Every round pays `payoff[joint_action]`; agents observe the round.
MultiAgentMDP build_matrix_game(std::span<const int> actions_per_agent,
                                const Eigen::VectorXd& payoff, int n_rounds, double gamma);
/// Two-agent convenience: rows index agent 0, columns agent 1.
MultiAgentMDP build_matrix_game(const Eigen::MatrixXd& payoff, int n_rounds, double gamma);

struct GridConfig {
  int width = 5;
  int height = 5;
  int n_agents = 2;
  std::vector<int> goals;   // one cell per agent; empty = opposite corners
  std::vector<int> starts;  // one cell per agent; empty = corners
  double gamma = 0.9;
};

enum GridMove : int { kUp = 0, kDown = 1, kLeft = 2, kRight = 3, kStay = 4 };
inline constexpr int kGridActions = 5;
inline constexpr int kMaxTabularStates = 100000;

/// Agents move on a W x H grid (walls clip). An agent that reaches its goal is
/// parked there; each arrival pays +1 to the team. The state where every
/// agent is parked is absorbing. Each agent observes only its own cell.
MultiAgentMDP build_gridworld(const GridConfig& cfg);

int grid_encode_state(std::span<const int> cells, int n_cells);
std::vector<int> grid_decode_state(int s, int n_agents, int n_cells);

/// Parses `matrix:<payoff-file>:<rounds>:<gamma>` or
/// `grid:<W>x<H>:<agents>:<gamma>`.
MultiAgentMDP make_env(std::string_view spec);

/// Reads whitespace-separated row-major reals: one line per action of agent 0.
Eigen::MatrixXd read_payoff_file(const std::string& path);

}  // namespace comadice
