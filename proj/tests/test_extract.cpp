#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "comadice/dataset.hpp"
#include "comadice/extract.hpp"
#include "comadice/oracle.hpp"
#include "helpers.hpp"

using namespace comadice;
using comadice::testing::random_env;
using comadice::testing::ring_env;

namespace {

Transition make_transition(const MultiAgentMDP& env, int s, std::vector<int> acts) {
  Transition t;
  t.s = s;
  t.obs = observe(env, s);
  t.a.flat = joint_encode(acts, env.actions_per_agent);
  t.a.per_agent = std::move(acts);
  t.s_next = s;
  t.obs_next = t.obs;
  return t;
}

OfflineDataset dataset_of(std::vector<Transition> ts) {
  OfflineDataset ds;
  ds.transitions = std::move(ts);
  return ds;
}

std::vector<const Transition*> pointers(const OfflineDataset& ds) {
  std::vector<const Transition*> out;
  for (const auto& t : ds.transitions) out.push_back(&t);
  return out;
}

std::vector<double> random_weights(std::size_t n, Rng& rng, double scale = 3.0) {
  std::vector<double> w(n);
  for (auto& x : w) x = scale * rng.uniform();
  return w;
}

/// All distributions over k actions with probabilities in multiples of 1/steps.
std::vector<Eigen::VectorXd> simplex_grid(int k, int steps) {
  std::vector<Eigen::VectorXd> out;
  std::vector<int> c(static_cast<std::size_t>(k), 0);
  std::function<void(int, int)> rec = [&](int i, int left) {
    if (i == k - 1) {
      c[static_cast<std::size_t>(i)] = left;
      Eigen::VectorXd p(k);
      for (int j = 0; j < k; ++j) p(j) = c[static_cast<std::size_t>(j)] / static_cast<double>(steps);
      out.push_back(p);
      return;
    }
    for (int x = 0; x <= left; ++x) {
      c[static_cast<std::size_t>(i)] = x;
      rec(i + 1, left - x);
    }
  };
  rec(0, steps);
  return out;
}

}  // namespace

TEST(Wbc, LossExamples) {
  const auto env = random_env(1, {.n_states = 2, .actions = {2, 2}});
  const auto ds = dataset_of({make_transition(env, 0, {0, 1}), make_transition(env, 1, {1, 0})});
  const auto batch = pointers(ds);
  PolicyNet pi{0, IndexNet(Backend::Tabular, 2, 2)};
  pi.net.entry(0, 0) = 0.7;
  pi.net.entry(1, 1) = -0.4;
  EXPECT_EQ(loss_wbc(pi, batch, {0.0, 0.0}), 0.0);

  // w = 1 is the plain negative log-likelihood
  const double nll = -std::log(pi.probs(0)(0)) - std::log(pi.probs(1)(1));
  EXPECT_NEAR(loss_wbc(pi, batch, {1.0, 1.0}), nll, 1e-14);

  // prob 1 on the first sample's action; the second sample carries no weight
  pi.net.entry(0, 0) = 100.0;
  pi.net.entry(0, 1) = -100.0;
  EXPECT_NEAR(loss_wbc(pi, batch, {2.0, 0.0}), 0.0, 1e-12);

  // the clamp bounds the loss of an impossible action
  pi.net.entry(1, 1) = -1000.0;
  EXPECT_NEAR(loss_wbc(pi, batch, {0.0, 1.0}), -std::log(kLogFloor), 1e-9);

  EXPECT_THROW(loss_wbc(pi, batch, {1.0}), std::invalid_argument);
  EXPECT_THROW(loss_wbc(pi, batch, {1.0, -1.0}), std::invalid_argument);
  EXPECT_THROW(train_policies(ds, {1.0}, env, PolicyConfig{}), std::invalid_argument);
}

TEST(Wbc, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto env = random_env(seed, {.n_states = 4, .actions = {3, 2}, .partial_obs = seed % 2 == 1});
    const auto ds = generate_dataset(env, LocalPolicySet::uniform(env), 4, 5, seed);
    const auto batch = pointers(ds);
    const auto w = random_weights(batch.size(), rng);
    for (Backend b : {Backend::Tabular, Backend::Mlp}) {
      const int agent = static_cast<int>(seed % 2);
      PolicyNet pi{agent, IndexNet(b, env.obs_sizes[agent], env.actions_per_agent[agent], 5)};
      comadice::testing::randomize({{"eta", &pi.net.params()}}, rng, 1.0);
      const Eigen::VectorXd g = grad_wbc(pi, batch, w);
      const double h = 1e-6;
      for (Eigen::Index j = 0; j < g.size(); ++j) {
        const double keep = pi.net.params()(j);
        pi.net.params()(j) = keep + h;
        const double up = loss_wbc(pi, batch, w);
        pi.net.params()(j) = keep - h;
        const double down = loss_wbc(pi, batch, w);
        pi.net.params()(j) = keep;
        const double fd = (up - down) / (2.0 * h);
        EXPECT_LE(std::abs(fd - g(j)), 1e-4 * std::max(1.0, std::abs(fd))) << "coordinate " << j;
      }
    }
  }
}

TEST(ClosedForm, Examples) {
  const auto env = random_env(2, {.n_states = 3, .actions = {2, 3}});
  const auto single = dataset_of({make_transition(env, 1, {1, 2})});
  const auto t = tabular_wbc_closed_form(single, {5.0}, 1, 3, 3);
  EXPECT_EQ(t(2, 1), 1.0);
  EXPECT_EQ(t.col(1).sum(), 1.0);
  // unvisited observations
  EXPECT_NEAR((t.col(0).array() - 1.0 / 3.0).abs().maxCoeff(), 0.0, 1e-15);
  EXPECT_NEAR((t.col(2).array() - 1.0 / 3.0).abs().maxCoeff(), 0.0, 1e-15);

  const auto two = dataset_of({make_transition(env, 0, {0, 0}), make_transition(env, 0, {1, 0})});
  const auto u = tabular_wbc_closed_form(two, {3.0, 1.0}, 0, 3, 2);
  EXPECT_DOUBLE_EQ(u(0, 0), 0.75);
  EXPECT_DOUBLE_EQ(u(1, 0), 0.25);

  // zero total weight on a visited observation falls back to uniform too
  const auto z = tabular_wbc_closed_form(two, {0.0, 0.0}, 0, 3, 2);
  EXPECT_DOUBLE_EQ(z(0, 0), 0.5);
}

TEST(ClosedForm, InvariantToWeightScale) {
  Rng rng(4);
  const auto env = random_env(4, {.n_states = 6, .actions = {3, 2}, .partial_obs = true});
  const auto ds = generate_dataset(env, LocalPolicySet::uniform(env), 10, 6, 1);
  const auto w = random_weights(ds.transitions.size(), rng);
  std::vector<double> scaled = w;
  for (auto& x : scaled) x *= 37.5;
  for (int i = 0; i < 2; ++i) {
    const auto a = tabular_wbc_closed_form(ds, w, i, env.obs_sizes[i], env.actions_per_agent[i]);
    const auto b = tabular_wbc_closed_form(ds, scaled, i, env.obs_sizes[i], env.actions_per_agent[i]);
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-14);
  }
}

// Integer weights whose per-state totals are 10 put every local optimum on a
// 0.1 grid, so exhaustive enumeration finds the exact decomposable maximum.
TEST(Decomposition, ProductOfLocalOptimaIsGloballyOptimal) {
  Rng rng(5);
  const std::vector<std::vector<int>> shapes = {{2, 2}, {2, 3}, {3, 3}};
  for (int n_states = 1; n_states <= 3; ++n_states) {
    for (const auto& acts : shapes) {
      const auto env = random_env(static_cast<std::uint64_t>(n_states * 10 + acts[1]),
                                  {.n_states = n_states, .actions = acts});
      std::vector<Transition> ts;
      std::vector<double> w;
      for (int s = 0; s < n_states; ++s) {
        for (int k = 0; k < 10; ++k) {
          ts.push_back(make_transition(env, s, {static_cast<int>(rng.below(acts[0])),
                                                static_cast<int>(rng.below(acts[1]))}));
          w.push_back(1.0);
        }
      }
      const auto ds = dataset_of(ts);

      LocalPolicySet closed;
      for (int i = 0; i < 2; ++i) {
        closed.tables.push_back(tabular_wbc_closed_form(ds, w, i, n_states, acts[i]));
      }
      const double achieved = global_wbc_objective(ds, w, closed);

      // Observations are states here, so the maximum splits over states;
      // within a state every pair of grid distributions is tried.
      const auto g0 = simplex_grid(acts[0], 10), g1 = simplex_grid(acts[1], 10);
      double best = 0.0;
      for (int s = 0; s < n_states; ++s) {
        Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(acts[0], acts[1]);
        for (std::size_t k = 0; k < ts.size(); ++k) {
          if (ts[k].s == s) counts(ts[k].a.per_agent[0], ts[k].a.per_agent[1]) += w[k];
        }
        double state_best = -std::numeric_limits<double>::infinity();
        for (const auto& p0 : g0) {
          for (const auto& p1 : g1) {
            double v = 0.0;
            for (int a0 = 0; a0 < acts[0]; ++a0) {
              for (int a1 = 0; a1 < acts[1]; ++a1) {
                if (counts(a0, a1) > 0.0) {
                  v += counts(a0, a1) * std::log(std::max(p0(a0) * p1(a1), kLogFloor));
                }
              }
            }
            state_best = std::max(state_best, v);
          }
        }
        best += state_best;
      }
      EXPECT_NEAR(achieved, best, 1e-9) << n_states << " states, actions " << acts[1];
    }
  }
}

TEST(Decomposition, NoRandomProductPolicyDoesBetter) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 100);
    const auto env = random_env(seed, {.n_states = 3,
                                       .actions = {2 + static_cast<int>(seed % 2), 3},
                                       .with_terminal = seed % 3 == 0,
                                       .partial_obs = seed % 2 == 0});
    const auto ds = generate_dataset(env, LocalPolicySet::uniform(env), 6, 4, seed);
    const auto w = random_weights(ds.transitions.size(), rng);
    LocalPolicySet closed;
    for (int i = 0; i < 2; ++i) {
      closed.tables.push_back(
          tabular_wbc_closed_form(ds, w, i, env.obs_sizes[i], env.actions_per_agent[i]));
    }
    const double achieved = global_wbc_objective(ds, w, closed);
    for (int trial = 0; trial < 2000; ++trial) {
      LocalPolicySet other = closed;
      for (auto& t : other.tables) {
        for (Eigen::Index o = 0; o < t.cols(); ++o) {
          // mostly small moves around the optimum, sometimes anywhere
          const double spread = trial % 4 == 0 ? 1.0 : 0.05;
          for (Eigen::Index a = 0; a < t.rows(); ++a) t(a, o) = std::max(1e-6, t(a, o) + spread * rng.uniform());
          t.col(o) /= t.col(o).sum();
        }
      }
      ASSERT_LE(global_wbc_objective(ds, w, other), achieved + 1e-9) << "seed " << seed;
    }
  }
}

TEST(Decomposition, GlobalObjectiveIsSumOfLocal) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto env = random_env(seed, {.n_states = 5, .actions = {3, 2, 2}, .partial_obs = true});
    const auto ds = generate_dataset(env, LocalPolicySet::uniform(env), 5, 6, seed);
    const auto w = random_weights(ds.transitions.size(), rng);
    LocalPolicySet pol = LocalPolicySet::uniform(env);
    for (auto& t : pol.tables) {
      t = t.unaryExpr([&](double) { return 0.05 + rng.uniform(); });
      for (Eigen::Index o = 0; o < t.cols(); ++o) t.col(o) /= t.col(o).sum();
    }
    double sum = 0.0;
    for (int i = 0; i < env.n_agents; ++i) sum += local_wbc_objective(ds, w, pol, i);
    EXPECT_NEAR(global_wbc_objective(ds, w, pol), sum, 1e-9 * std::max(1.0, std::abs(sum)));
  }
}

TEST(TrainPolicies, GradientSolverReachesClosedForm) {
  const auto env = random_env(7, {.n_states = 4, .actions = {3, 2}, .partial_obs = true});
  // every (state, joint action) once: all local entries are strictly inside the simplex
  std::vector<Transition> ts;
  for (int s = 0; s < env.n_states; ++s) {
    for (int a = 0; a < env.n_joint(); ++a) {
      ts.push_back(make_transition(env, s, joint_decode(a, env.actions_per_agent)));
    }
  }
  const auto ds = dataset_of(ts);
  Rng rng(9);
  std::vector<double> w = random_weights(ds.transitions.size(), rng);
  for (auto& x : w) x += 0.2;

  PolicyConfig cfg;
  cfg.solver = PolicySolver::Gradient;
  cfg.batch_size = 0;
  cfg.lr = 1.0;  // 5 already oscillates for some weight draws
  cfg.steps = 20000;
  cfg.seed = 3;
  const auto trained = train_policies(ds, w, env, cfg);
  for (int i = 0; i < env.n_agents; ++i) {
    const auto closed = tabular_wbc_closed_form(ds, w, i, env.obs_sizes[i], env.actions_per_agent[i]);
    EXPECT_LE((trained.tables[i] - closed).cwiseAbs().maxCoeff(), 1e-4) << "agent " << i;
  }
}

TEST(TrainPolicies, SameSeedSameTables) {
  const auto env = random_env(8, {.n_states = 5, .actions = {2, 3}});
  const auto ds = generate_dataset(env, LocalPolicySet::uniform(env), 10, 6, 4);
  const std::vector<double> w(ds.transitions.size(), 1.0);
  for (Backend b : {Backend::Tabular, Backend::Mlp}) {
    PolicyConfig cfg;
    cfg.backend = b;
    cfg.solver = PolicySolver::Gradient;
    cfg.hidden = 8;
    cfg.lr = 0.1;
    cfg.steps = 50;
    cfg.batch_size = 7;
    cfg.seed = 11;
    const auto a = train_policies(ds, w, env, cfg);
    const auto c = train_policies(ds, w, env, cfg);
    for (int i = 0; i < 2; ++i) EXPECT_EQ(a.tables[i], c.tables[i]);
    cfg.seed = 12;
    EXPECT_NE(train_policies(ds, w, env, cfg).tables[0], a.tables[0]);
  }
}

TEST(TrainPolicies, UnitWeightsArePlainBehaviorCloning) {
  const auto env = random_env(9, {.n_states = 6, .actions = {3, 2}, .partial_obs = true});
  auto beh = LocalPolicySet::uniform(env);
  const auto ds = generate_dataset(env, beh, 20, 7, 5);
  const std::vector<double> ones(ds.transitions.size(), 1.0);
  const auto pol = train_policies(ds, ones, env, PolicyConfig{});
  for (int i = 0; i < env.n_agents; ++i) {
    // empirical action frequencies per observation
    Eigen::MatrixXd freq = Eigen::MatrixXd::Zero(env.actions_per_agent[i], env.obs_sizes[i]);
    for (const auto& t : ds.transitions) freq(t.a.per_agent[i], t.obs[i]) += 1.0;
    for (Eigen::Index o = 0; o < freq.cols(); ++o) {
      const double n = freq.col(o).sum();
      if (n == 0.0) continue;
      EXPECT_LE((pol.tables[i].col(o) - freq.col(o) / n).cwiseAbs().maxCoeff(), 1e-15);
    }
  }
}

TEST(TrainPolicies, RecoversDeterministicExpert) {
  const auto env = make_env("grid:4x4:2:0.9");
  const auto expert = make_behavior(env, "expert");
  const auto ds = generate_dataset(env, expert, 20, 30, 1, "expert");
  const std::vector<double> ones(ds.transitions.size(), 1.0);
  const auto pol = train_policies(ds, ones, env, PolicyConfig{});
  int visited = 0;
  for (int i = 0; i < env.n_agents; ++i) {
    std::vector<char> seen(static_cast<std::size_t>(env.obs_sizes[i]), 0);
    for (const auto& t : ds.transitions) seen[static_cast<std::size_t>(t.obs[i])] = 1;
    for (int o = 0; o < env.obs_sizes[i]; ++o) {
      if (!seen[static_cast<std::size_t>(o)]) continue;
      ++visited;
      EXPECT_EQ(pol.tables[i].col(o), expert.tables[i].col(o)) << "agent " << i << " obs " << o;
    }
  }
  EXPECT_GT(visited, 4);
}

TEST(JointPolicy, Examples) {
  const auto env = random_env(3, {.n_states = 4, .actions = {2, 2}, .partial_obs = true});
  const auto uni = joint_policy(env, LocalPolicySet::uniform(env));
  EXPECT_NEAR((uni.array() - 0.25).abs().maxCoeff(), 0.0, 1e-15);

  const auto det = joint_policy(env, LocalPolicySet::deterministic(env, {{1, 0, 1, 1}, {0, 1}}));
  for (int s = 0; s < env.n_states; ++s) {
    EXPECT_EQ(det.row(s).maxCoeff(), 1.0);
    EXPECT_EQ(det.row(s).sum(), 1.0);
  }
  EXPECT_EQ(det(2, joint_encode(std::vector<int>{1, 1}, env.actions_per_agent)), 1.0);

  Rng rng(6);
  const auto env3 = random_env(6, {.n_states = 5, .actions = {3, 2, 2}, .partial_obs = true});
  LocalPolicySet pol = LocalPolicySet::uniform(env3);
  for (auto& t : pol.tables) {
    t = t.unaryExpr([&](double) { return rng.uniform(); });
    for (Eigen::Index o = 0; o < t.cols(); ++o) t.col(o) /= t.col(o).sum();
  }
  const auto joint = joint_policy(env3, pol);
  for (int s = 0; s < env3.n_states; ++s) EXPECT_NEAR(joint.row(s).sum(), 1.0, 1e-12);
}

TEST(Evaluate, DeterministicOptimalPolicyIsExact) {
  const auto env = ring_env(6, 0.9, 4);
  const Eigen::VectorXd v = optimal_values(env);
  std::vector<std::vector<int>> acts(2, std::vector<int>(6));
  for (int s = 0; s < env.n_states; ++s) {
    Eigen::Index best = 0;
    const Eigen::VectorXd q = env.reward.row(s).transpose() +
                              env.discount * (env.transition.middleRows(s * env.n_joint(), env.n_joint()) * v);
    q.maxCoeff(&best);
    const auto per = joint_decode(static_cast<int>(best), env.actions_per_agent);
    acts[0][static_cast<std::size_t>(s)] = per[0];
    acts[1][static_cast<std::size_t>(s)] = per[1];
  }
  const auto r = evaluate(env, LocalPolicySet::deterministic(env, acts), 16, 400, 3);
  EXPECT_NEAR(r.mean, optimal_return(env), 1e-9);
  EXPECT_NEAR(r.std, 0.0, 1e-12);
  EXPECT_NEAR(r.undiscounted_std, 0.0, 1e-12);
}

TEST(Evaluate, SingleStateGeometricSeries) {
  const auto env = random_env(12, {.n_states = 1, .actions = {2, 2}, .gamma = 0.8});
  const auto pol = LocalPolicySet::uniform(env);
  const int horizon = 20, episodes = 4000;
  const double mean_r = env.reward.row(0).mean();
  const double expected = mean_r * (1.0 - std::pow(0.8, horizon)) / 0.2;
  const auto r = evaluate(env, pol, episodes, horizon, 8);
  EXPECT_LE(std::abs(r.mean - expected), 3.0 * r.std / std::sqrt(episodes));
  EXPECT_NEAR(r.undiscounted_mean, mean_r * horizon, 3.0 * r.undiscounted_std / std::sqrt(episodes));
  EXPECT_THROW(evaluate(env, pol, 0, horizon, 8), std::invalid_argument);
}
