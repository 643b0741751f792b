#pragma once

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "comadice/mamdp.hpp"
#include "comadice/nets.hpp"
#include "comadice/rng.hpp"
#include "comadice/trainer.hpp"

namespace comadice::testing {

namespace fs = std::filesystem;

inline std::vector<int> identity_obs(int n) {
  std::vector<int> o(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) o[static_cast<std::size_t>(s)] = s;
  return o;
}

/// Deterministic ring of n states, never terminating. Agent 0 stays, steps
/// forward or steps back; agent 1 only changes the reward, which is
/// u(s, a0) + v(s, a1), so Q-values split additively across agents.
inline MultiAgentMDP ring_env(int n, double gamma, std::uint64_t seed) {
  MultiAgentMDP env;
  env.n_agents = 2;
  env.n_states = n;
  env.actions_per_agent = {3, 2};
  env.discount = gamma;
  const int na = env.n_joint();
  Rng rng(seed);
  Eigen::MatrixXd u(n, 3), v(n, 2);
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < 3; ++a) u(s, a) = rng.uniform();
    for (int a = 0; a < 2; ++a) v(s, a) = 0.5 * rng.uniform();
  }
  env.reward.resize(n, na);
  std::vector<Eigen::Triplet<double>> trip;
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < na; ++a) {
      const int a0 = a / 2, a1 = a % 2;
      const int next = a0 == 0 ? s : (a0 == 1 ? (s + 1) % n : (s + n - 1) % n);
      trip.emplace_back(s * na + a, next, 1.0);
      env.reward(s, a) = u(s, a0) + v(s, a1);
    }
  }
  env.transition.resize(n * na, n);
  env.transition.setFromTriplets(trip.begin(), trip.end());
  env.initial_dist = Eigen::VectorXd::Unit(n, 0);
  env.obs_fn = {identity_obs(n), identity_obs(n)};
  env.obs_sizes = {n, n};
  env.terminal.assign(static_cast<std::size_t>(n), 0);
  env.validate();
  return env;
}

struct RandomEnvOptions {
  int n_states = 5;
  std::vector<int> actions = {2, 2};
  double gamma = 0.9;
  int max_successors = 3;
  bool with_terminal = false;  // last state absorbing
  bool partial_obs = false;    // agent i sees s / (i + 1)
};

/// Random sparse dynamics, rewards in [0, 1), initial mass on up to two states.
inline MultiAgentMDP random_env(std::uint64_t seed, const RandomEnvOptions& o = {}) {
  Rng rng(seed);
  MultiAgentMDP env;
  env.n_agents = static_cast<int>(o.actions.size());
  env.n_states = o.n_states;
  env.actions_per_agent = o.actions;
  env.discount = o.gamma;
  const int n = o.n_states;
  const int na = env.n_joint();
  env.terminal.assign(static_cast<std::size_t>(n), 0);
  if (o.with_terminal) env.terminal.back() = 1;
  env.reward = Eigen::MatrixXd::Zero(n, na);
  std::vector<Eigen::Triplet<double>> trip;
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < na; ++a) {
      if (env.is_terminal(s)) {
        trip.emplace_back(s * na + a, s, 1.0);
        continue;
      }
      env.reward(s, a) = rng.uniform();
      const int k = 1 + static_cast<int>(rng.below(static_cast<std::size_t>(o.max_successors)));
      std::vector<double> mass(static_cast<std::size_t>(n), 0.0);
      double total = 0.0;
      for (int j = 0; j < k; ++j) {
        const double m = 0.1 + rng.uniform();
        mass[rng.below(static_cast<std::size_t>(n))] += m;
        total += m;
      }
      for (int t = 0; t < n; ++t) {
        if (mass[static_cast<std::size_t>(t)] > 0.0) {
          trip.emplace_back(s * na + a, t, mass[static_cast<std::size_t>(t)] / total);
        }
      }
    }
  }
  env.transition.resize(static_cast<Eigen::Index>(n) * na, n);
  env.transition.setFromTriplets(trip.begin(), trip.end());
  env.initial_dist = Eigen::VectorXd::Zero(n);
  env.initial_dist(0) = 0.6;
  env.initial_dist(n > 2 ? 1 : 0) += 0.4;
  for (int i = 0; i < env.n_agents; ++i) {
    std::vector<int> obs(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s) obs[static_cast<std::size_t>(s)] = o.partial_obs ? s / (i + 1) : s;
    env.obs_fn.push_back(obs);
    env.obs_sizes.push_back(o.partial_obs ? (n - 1) / (i + 1) + 1 : n);
  }
  env.validate();
  return env;
}

/// Random full-support joint policy (n_states x n_joint).
inline Eigen::MatrixXd random_joint_policy(const MultiAgentMDP& env, Rng& rng) {
  Eigen::MatrixXd pi(env.n_states, env.n_joint());
  for (int s = 0; s < env.n_states; ++s) {
    for (int a = 0; a < env.n_joint(); ++a) pi(s, a) = 0.2 + rng.uniform();
    pi.row(s) /= pi.row(s).sum();
  }
  return pi;
}

/// Overwrites every parameter block with U[-scale, scale).
inline void randomize(const std::vector<ParamBlock>& blocks, Rng& rng, double scale) {
  for (const auto& b : blocks) {
    for (Eigen::Index i = 0; i < b.values->size(); ++i) {
      (*b.values)(i) = scale * (2.0 * rng.uniform() - 1.0);
    }
  }
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// A fresh empty directory under the test temp root.
inline fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::path(::testing::TempDir()) / ("comadice_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace comadice::testing
