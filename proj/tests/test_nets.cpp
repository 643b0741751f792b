#include <gtest/gtest.h>

#include "comadice/autodiff.hpp"
#include "comadice/dataset.hpp"
#include "comadice/nets.hpp"
#include "comadice/trainer.hpp"
#include "helpers.hpp"

using namespace comadice;
using comadice::testing::randomize;

namespace {

std::vector<MixerParams> mixers(Rng& rng, int n_agents, int n_states) {
  std::vector<MixerParams> out;
  for (int depth : {1, 2}) {
    for (Backend b : {Backend::Tabular, Backend::Mlp}) {
      for (Activation act : {Activation::Elu, Activation::Relu}) {
        if (depth == 1 && act == Activation::Relu) continue;
        auto m = MixerParams::make(depth, n_agents, n_states, b, 5, act, rng);
        randomize(m.blocks(), rng, 1.0);
        out.push_back(std::move(m));
      }
    }
  }
  return out;
}

Eigen::VectorXd random_vec(Rng& rng, int n, double scale) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = scale * (2.0 * rng.uniform() - 1.0);
  return v;
}

}  // namespace

TEST(LocalValues, Examples) {
  const std::vector<int> obs_sizes = {4, 3};
  auto tab = AgentValueParams::make(Backend::Tabular, obs_sizes, 0);
  for (int o = 0; o < 4; ++o) EXPECT_EQ(tab.value(0, o), 0.0);
  tab.agents[0].entry(2, 0) = 1.5;
  EXPECT_EQ(tab.value(0, 2), 1.5);
  EXPECT_EQ(tab.value(0, 1), 0.0);

  auto mlp = AgentValueParams::make(Backend::Mlp, obs_sizes, 8);
  for (auto& net : mlp.agents) net.params().setZero();
  for (int o = 0; o < 3; ++o) EXPECT_EQ(mlp.value(1, o), 0.0);

  Rng rng(1);
  auto init = AgentValueParams::make(Backend::Mlp, obs_sizes, 8, &rng);
  const double bound = 1.0 / std::sqrt(4.0);
  // first layer of agent 0: one-hot input of width 4
  EXPECT_LE(init.agents[0].params().head(8 * 4).cwiseAbs().maxCoeff(), bound);
}

TEST(Mix, Examples) {
  const auto sum = MixerParams::sum(3, 2);
  EXPECT_DOUBLE_EQ(mix(sum, 1, Eigen::Vector3d(1, 2, 3)), 6.0);

  Rng rng(2);
  auto m = MixerParams::make(1, 2, 3, Backend::Tabular, 0, Activation::Elu, rng);
  m.b1.entry(1, 0) = 0.7;
  EXPECT_DOUBLE_EQ(mix(m, 1, Eigen::Vector2d::Zero()), 0.7);
  EXPECT_THROW(mix(m, 1, Eigen::Vector3d::Zero()), std::invalid_argument);
  EXPECT_THROW(MixerParams::make(3, 2, 3, Backend::Tabular, 4, Activation::Elu, rng),
               std::invalid_argument);
}

TEST(AdvantageTot, Examples) {
  const std::vector<int> obs_sizes = {2, 2};
  const std::vector<int> acts = {2, 2};
  Rng rng(3);
  auto nu = AgentValueParams::make(Backend::Tabular, obs_sizes, 0);
  auto q = AgentQParams::make(Backend::Tabular, obs_sizes, acts, 0);
  const std::vector<int> obs = {1, 0};
  const std::vector<int> a = {1, 1};

  // q == nu
  nu.agents[0].entry(1, 0) = 0.3;
  nu.agents[1].entry(0, 0) = -0.2;
  q.agents[0].entry(1, 1) = 0.3;
  q.agents[1].entry(0, 1) = -0.2;
  auto m = MixerParams::make(1, 2, 2, Backend::Tabular, 0, Activation::Elu, rng);
  m.w1.entry(0, 0) = 2.0;
  m.b1.entry(0, 0) = 0.4;
  EXPECT_DOUBLE_EQ(advantage_tot(q, nu, m, 0, obs, a), 0.4);

  q.agents[0].entry(1, 1) = 0.8;   // local advantage 0.5
  q.agents[1].entry(0, 1) = -0.7;  // local advantage -0.5
  EXPECT_NEAR(advantage_tot(q, nu, MixerParams::sum(2, 2), 0, obs, a), 0.0, 1e-15);

  for (const auto& mx : mixers(rng, 2, 2)) {
    for (Backend b : {Backend::Tabular, Backend::Mlp}) {
      auto rq = AgentQParams::make(b, obs_sizes, acts, 6, &rng);
      auto rn = AgentValueParams::make(b, obs_sizes, 6, &rng);
      randomize(rq.blocks(), rng, 1.0);
      randomize(rn.blocks(), rng, 1.0);
      const Eigen::VectorXd diff = rq.values(obs, a) - rn.values(obs);
      EXPECT_NEAR(advantage_tot(rq, rn, mx, 1, obs, a),
                  mix(mx, 1, Eigen::Vector2d(rq.q(0, 1, 1) - rn.value(0, 1), rq.q(1, 0, 1) - rn.value(1, 0))),
                  1e-12);
      EXPECT_NEAR(diff(0), rq.q(0, 1, 1) - rn.value(0, 1), 1e-12);
    }
  }
}

TEST(Mixer, MonotoneAndConvexInLocals) {
  Rng rng(4);
  for (const auto& m : mixers(rng, 3, 4)) {
    for (int k = 0; k < 300; ++k) {
      const int s = static_cast<int>(rng.below(4));
      const Eigen::VectorXd x = random_vec(rng, 3, 3.0);
      Eigen::VectorXd bump = random_vec(rng, 3, 1.0).cwiseAbs();
      EXPECT_LE(mix(m, s, x), mix(m, s, x + bump) + 1e-12);
      const Eigen::VectorXd y = random_vec(rng, 3, 3.0);
      EXPECT_LE(mix(m, s, 0.5 * (x + y)), 0.5 * (mix(m, s, x) + mix(m, s, y)) + 1e-12);
    }
  }
}

TEST(Mixer, BackwardMatchesFiniteDifferences) {
  Rng rng(5);
  for (auto m : mixers(rng, 3, 4)) {
    for (int s = 0; s < 4; ++s) {
      const Eigen::VectorXd x = random_vec(rng, 3, 2.0);
      MixTrace trace;
      mix(m, s, x, trace);
      Eigen::VectorXd d_locals = Eigen::VectorXd::Zero(3);
      MixerParams d_theta = zeros_like(m);
      mix_backward(m, s, x, trace, 1.0, &d_locals, &d_theta);

      const Eigen::VectorXd fd_locals = finite_difference_gradient(
          [&](const Eigen::VectorXd& v) { return mix(m, s, v); }, x);
      EXPECT_LT(max_relative_error(d_locals, fd_locals), 1e-6);

      const auto blocks = m.blocks();
      const Eigen::VectorXd flat = flatten(blocks);
      const Eigen::VectorXd fd_theta = finite_difference_gradient(
          [&](const Eigen::VectorXd& v) {
            assign(blocks, v);
            const double out = mix(m, s, x);
            assign(blocks, flat);
            return out;
          },
          flat);
      EXPECT_LT(max_relative_error(flatten(d_theta.blocks()), fd_theta), 1e-5)
          << "depth " << m.depth;
    }
  }
}

TEST(IndexNet, BackwardMatchesFiniteDifferences) {
  Rng rng(6);
  for (Backend b : {Backend::Tabular, Backend::Mlp}) {
    IndexNet net(b, 5, 3, 7);
    net.init_uniform(rng);
    randomize({{"net", &net.params()}}, rng, 0.8);
    const Eigen::VectorXd d_out = random_vec(rng, 3, 1.0);
    for (int input = 0; input < 5; ++input) {
      Eigen::VectorXd g = Eigen::VectorXd::Zero(net.params().size());
      net.backward(input, d_out, g);
      const Eigen::VectorXd flat = net.params();
      const Eigen::VectorXd fd = finite_difference_gradient(
          [&](const Eigen::VectorXd& v) {
            net.params() = v;
            const double out = net.forward(input).dot(d_out);
            net.params() = flat;
            return out;
          },
          flat);
      EXPECT_LT(max_relative_error(g, fd), 1e-6);
    }
  }
}

TEST(Gradient, Examples) {
  Eigen::VectorXd p(4);
  p << 1.0, -2.0, 0.5, 3.0;
  EXPECT_LT((gradient([&](const auto& x) { return AutoScalar(0.5 * x.squaredNorm()); }, p) - p)
                .cwiseAbs()
                .maxCoeff(),
            1e-15);
  EXPECT_EQ(gradient([](const auto&) { return AutoScalar(3.0); }, p), Eigen::VectorXd::Zero(4));

  Eigen::VectorXd good = Eigen::VectorXd::Ones(2);
  Eigen::VectorXd bad(2);
  bad << 1.0, std::nan("");
  const std::vector<ParamBlock> blocks = {{"psi_q", &good}, {"psi_nu", &bad}};
  try {
    gradient([](const auto& x) { return AutoScalar(x.sum()); }, blocks);
    FAIL() << "expected a domain error";
  } catch (const std::domain_error& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("psi_nu"), std::string::npos) << what;
    EXPECT_EQ(what.find("psi_q"), std::string::npos) << what;
  }
}

TEST(Mixer, WeightsStayNonNegativeAfterEveryUpdate) {
  const auto env = comadice::testing::random_env(7, {.n_states = 4, .actions = {2, 2}});
  const auto ds = generate_dataset(env, LocalPolicySet::uniform(env), 20, 10, 1);
  for (int depth : {1, 2}) {
    for (Backend b : {Backend::Tabular, Backend::Mlp}) {
      TrainConfig cfg;
      cfg.gamma = env.discount;
      cfg.alpha = 1.0;
      cfg.mixer_depth = depth;
      cfg.backend = b;
      cfg.hidden = 6;
      cfg.hidden_mixer = 4;
      cfg.batch_size = 16;
      cfg.steps = 30;
      cfg.lr_q = cfg.lr_nu = cfg.lr_theta = 0.05;
      int checks = 0;
      TrainHooks hooks;
      hooks.on_update = [&](std::string_view, const DiceParams& p) {
        for (int s = 0; s < env.n_states; ++s) {
          const Eigen::VectorXd w = p.theta.w1.forward(s).cwiseAbs();
          EXPECT_GE(w.minCoeff(), 0.0);
          if (depth == 1) {
            EXPECT_EQ(p.theta.weights(s), w);
          }
          // realized weights, hence monotone in locals
          const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(2, -1.0, 1.0);
          EXPECT_LE(mix(p.theta, s, x), mix(p.theta, s, x + Eigen::VectorXd::Constant(2, 0.1)) + 1e-12);
        }
        ++checks;
      };
      train_ratio(ds, env, cfg, hooks);
      EXPECT_EQ(checks, 3 * cfg.steps);
    }
  }
}
