#include <gtest/gtest.h>

#include <cmath>

#include "comadice/dataset.hpp"
#include "comadice/oracle.hpp"
#include "comadice/textio.hpp"
#include "helpers.hpp"

using namespace comadice;
using comadice::testing::random_env;
using comadice::testing::read_file;
using comadice::testing::scratch_dir;

namespace {

LocalPolicySet random_locals(const MultiAgentMDP& env, Rng& rng) {
  LocalPolicySet pol = LocalPolicySet::uniform(env);
  for (auto& t : pol.tables) {
    for (Eigen::Index o = 0; o < t.cols(); ++o) {
      for (Eigen::Index a = 0; a < t.rows(); ++a) t(a, o) = 0.1 + rng.uniform();
      t.col(o) /= t.col(o).sum();
    }
  }
  return pol;
}

}  // namespace

TEST(Generate, SingleStateFrequenciesAreUniform) {
  const auto env = random_env(1, {.n_states = 1, .actions = {2, 3}});
  const auto ds = generate_dataset(env, LocalPolicySet::uniform(env), 100, 10, 7);
  ASSERT_EQ(ds.transitions.size(), 1000u);
  std::vector<int> counts(6, 0);
  for (const auto& t : ds.transitions) ++counts[static_cast<std::size_t>(t.a.flat)];
  const double n = 1000.0, p = 1.0 / 6.0;
  const double sigma = std::sqrt(n * p * (1.0 - p));
  for (int c : counts) EXPECT_LE(std::abs(c - n * p), 3.0 * sigma);
}

TEST(Generate, DeterministicEnvAndPolicyRepeat) {
  const auto env = comadice::testing::ring_env(6, 0.9, 1);
  const auto pol = LocalPolicySet::deterministic(env, {{1, 1, 2, 0, 1, 2}, {0, 1, 0, 1, 0, 1}});
  const auto ds = generate_dataset(env, pol, 5, 12, 3);
  for (std::size_t k = 1; k < 5; ++k) {
    for (std::size_t t = 0; t < 12; ++t) EXPECT_EQ(ds.transitions[k * 12 + t], ds.transitions[t]);
  }
}

TEST(Generate, SameSeedSameBytes) {
  const auto env = make_env("grid:3x3:2:0.9");
  const auto pol = make_behavior(env, "mix:0.3");
  const auto a = serialize_dataset(generate_dataset(env, pol, 50, 20, 9, "mix:0.3"));
  const auto b = serialize_dataset(generate_dataset(env, pol, 50, 20, 9, "mix:0.3"));
  EXPECT_EQ(a, b);
  EXPECT_NE(a, serialize_dataset(generate_dataset(env, pol, 50, 20, 10, "mix:0.3")));
}

TEST(Generate, StopsAtTerminalAndFlagsStarts) {
  const auto env = make_env("grid:3x3:2:0.9");
  const auto ds = generate_dataset(env, make_behavior(env, "expert"), 3, 50, 0, "expert");
  ds.validate();
  EXPECT_EQ(ds.initial_indices().size(), 3u);
  for (std::size_t k = 0; k < ds.transitions.size(); ++k) {
    const auto& t = ds.transitions[k];
    if (k + 1 < ds.transitions.size()) {
      EXPECT_EQ(t.terminal, ds.transitions[k + 1].is_initial);
    }
  }
  EXPECT_TRUE(ds.transitions.back().terminal);
  EXPECT_DOUBLE_EQ(ds.meta.return_mean, 2.0);
}

TEST(Mixture, Examples) {
  const auto env = make_env("grid:2x2:2:0.9");
  const auto expert = make_behavior(env, "expert");
  const auto same = mixture_behavior(expert, 0.0);
  for (std::size_t i = 0; i < expert.tables.size(); ++i) EXPECT_EQ(same.tables[i], expert.tables[i]);
  const auto uni = mixture_behavior(expert, 1.0);
  for (const auto& t : uni.tables) EXPECT_NEAR((t.array() - 0.2).abs().maxCoeff(), 0.0, 1e-15);

  const auto two = random_env(2, {.n_states = 2, .actions = {2, 2}});
  const auto det = LocalPolicySet::deterministic(two, {{0, 0}, {0, 0}});
  const auto half = mixture_behavior(det, 0.5);
  EXPECT_DOUBLE_EQ(half.prob(0, 1, 0), 0.75);
  EXPECT_DOUBLE_EQ(half.prob(0, 1, 1), 0.25);
  EXPECT_THROW(mixture_behavior(det, 1.5), std::invalid_argument);
  EXPECT_THROW(make_behavior(two, "expert"), std::invalid_argument);
  EXPECT_THROW(make_behavior(env, "mix:abc"), std::invalid_argument);
  EXPECT_THROW(make_behavior(env, "greedy"), std::invalid_argument);
}

TEST(Serialization, RoundTripsRandomDatasets) {
  const auto dir = scratch_dir("dataset_roundtrip");
  Rng rng(3);
  for (int k = 0; k < 100; ++k) {
    const auto env = random_env(static_cast<std::uint64_t>(k),
                                {.n_states = 2 + k % 7,
                                 .actions = k % 3 == 0 ? std::vector<int>{3, 2, 2} : std::vector<int>{2, 4},
                                 .with_terminal = k % 2 == 0,
                                 .partial_obs = k % 4 == 1});
    const auto pol = random_locals(env, rng);
    const auto ds = generate_dataset(env, pol, static_cast<int>(rng.below(8)), 1 + k % 9,
                                     static_cast<std::uint64_t>(k), "custom");
    const auto path = (dir / ("ds" + std::to_string(k) + ".txt")).string();
    save_dataset(ds, path);
    const auto back = load_dataset(path);
    EXPECT_EQ(back.meta, ds.meta);
    EXPECT_EQ(back.transitions, ds.transitions);
    EXPECT_EQ(serialize_dataset(back), read_file(path));
  }
}

TEST(Serialization, EmptyDatasetIsHeaderOnly) {
  const auto dir = scratch_dir("dataset_empty");
  const auto env = random_env(1);
  const auto ds = generate_dataset(env, LocalPolicySet::uniform(env), 0, 5, 0);
  const auto path = (dir / "empty.txt").string();
  save_dataset(ds, path);
  const std::string text = read_file(path);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1);
  EXPECT_EQ(text.rfind("COMADICE-DS v1 ", 0), 0u);
  EXPECT_TRUE(load_dataset(path).transitions.empty());
}

TEST(Serialization, ErrorsNameLineAndField) {
  const auto dir = scratch_dir("dataset_errors");
  const auto env = random_env(2);
  const auto ds = generate_dataset(env, LocalPolicySet::uniform(env), 3, 4, 1);
  const std::string text = serialize_dataset(ds);
  const auto write = [&](const std::string& name, const std::string& body) {
    const auto p = (dir / name).string();
    write_text_file(p, body);
    return p;
  };
  auto expect_error = [](const std::string& path, const std::string& needle) {
    try {
      load_dataset(path);
      ADD_FAILURE() << "expected an error containing '" << needle << "'";
    } catch (const std::runtime_error& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };

  // drop the last three records
  std::string cut = text;
  for (int k = 0; k < 3; ++k) cut.erase(cut.find_last_of('\n', cut.size() - 2) + 1);
  expect_error(write("truncated.txt", cut), "truncated");

  // chop the last record in the middle of a field list
  std::string partial = text.substr(0, text.size() - 6);
  const int last_line = static_cast<int>(std::count(text.begin(), text.end(), '\n'));
  expect_error(write("partial.txt", partial + "\n"), ":" + std::to_string(last_line) + ":");

  std::string bad = text;
  const auto second = bad.find('\n') + 1;
  bad.replace(second, bad.find(' ', second) - second, "x");
  expect_error(write("bad.txt", bad), ":2: field 's'");

  expect_error(write("nohdr.txt", text.substr(text.find('\n') + 1)), ":1:");
}

TEST(Visitation, ConvergesToExactOccupancy) {
  const auto env = random_env(5, {.n_states = 12, .actions = {2, 2}, .gamma = 0.8});
  Rng rng(8);
  const auto pol = random_locals(env, rng);
  // 1000 trajectories of 100 steps: gamma^100 is negligible
  const auto ds = generate_dataset(env, pol, 1000, 100, 4);
  ASSERT_EQ(ds.transitions.size(), 100000u);
  const auto emp = empirical_occupancy(ds, env, VisitWeighting::Discounted);
  const auto exact = occupancy_measure(env, joint_policy(env, pol));
  EXPECT_LE(total_variation(emp.rho, exact.rho), 0.05);
}
