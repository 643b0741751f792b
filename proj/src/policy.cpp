#include "comadice/policy.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "comadice/textio.hpp"
#include "json.hpp"

namespace comadice {

LocalPolicySet LocalPolicySet::uniform(const MultiAgentMDP& env) {
  LocalPolicySet p;
  for (int i = 0; i < env.n_agents; ++i) {
    const int na = env.actions_per_agent[i];
    p.tables.push_back(Eigen::MatrixXd::Constant(na, env.obs_sizes[i], 1.0 / na));
  }
  return p;
}

LocalPolicySet LocalPolicySet::deterministic(const MultiAgentMDP& env,
                                             const std::vector<std::vector<int>>& actions) {
  if (static_cast<int>(actions.size()) != env.n_agents) {
    throw std::invalid_argument("deterministic policy: one action table per agent required");
  }
  LocalPolicySet p;
  for (int i = 0; i < env.n_agents; ++i) {
    if (static_cast<int>(actions[i].size()) != env.obs_sizes[i]) {
      throw std::invalid_argument("deterministic policy: action table of agent " +
                                  std::to_string(i) + " must cover every observation");
    }
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(env.actions_per_agent[i], env.obs_sizes[i]);
    for (int o = 0; o < env.obs_sizes[i]; ++o) t(actions[i][o], o) = 1.0;
    p.tables.push_back(std::move(t));
  }
  return p;
}

Eigen::VectorXd LocalPolicySet::distribution(int agent, int obs,
                                             std::span<const char> available) const {
  Eigen::VectorXd p = tables[agent].col(obs);
  if (available.empty()) return p;
  for (Eigen::Index a = 0; a < p.size(); ++a) {
    if (!available[static_cast<std::size_t>(a)]) p(a) = 0.0;
  }
  const double z = p.sum();
  if (z > 0.0) return p / z;
  // Nothing left: uniform over the available actions.
  for (Eigen::Index a = 0; a < p.size(); ++a) p(a) = available[static_cast<std::size_t>(a)] ? 1.0 : 0.0;
  return p / p.sum();
}

int LocalPolicySet::sample(int agent, int obs, Rng& rng) const {
  const auto col = tables[agent].col(obs);
  return static_cast<int>(rng.categorical(std::span<const double>(col.data(), col.size())));
}

void LocalPolicySet::validate() const {
  for (std::size_t i = 0; i < tables.size(); ++i) {
    for (Eigen::Index o = 0; o < tables[i].cols(); ++o) {
      const auto col = tables[i].col(o);
      if ((col.array() < 0.0).any() || std::abs(col.sum() - 1.0) > 1e-9 || !col.allFinite()) {
        throw std::invalid_argument("policy of agent " + std::to_string(i) + " at observation " +
                                    std::to_string(o) + " is not a distribution");
      }
    }
  }
}

void LocalPolicySet::check_compatible(const MultiAgentMDP& env) const {
  if (n_agents() != env.n_agents) throw std::invalid_argument("policy/env agent count mismatch");
  for (int i = 0; i < env.n_agents; ++i) {
    if (tables[i].rows() != env.actions_per_agent[i] || tables[i].cols() != env.obs_sizes[i]) {
      throw std::invalid_argument("policy table of agent " + std::to_string(i) +
                                  " does not match the environment");
    }
  }
}

Eigen::MatrixXd joint_policy(const MultiAgentMDP& env, const LocalPolicySet& locals) {
  locals.check_compatible(env);
  const int na = env.n_joint();
  Eigen::MatrixXd pi(env.n_states, na);
  std::vector<int> a(static_cast<std::size_t>(env.n_agents));
  for (int flat = 0; flat < na; ++flat) {
    a = joint_decode(flat, env.actions_per_agent);
    for (int s = 0; s < env.n_states; ++s) {
      double p = 1.0;
      for (int i = 0; i < env.n_agents; ++i) p *= locals.prob(i, env.obs_fn[i][s], a[i]);
      pi(s, flat) = p;
    }
  }
  return pi;
}

EvalResult evaluate(const MultiAgentMDP& env, const LocalPolicySet& locals, int episodes,
                    int horizon, std::uint64_t seed) {
  if (episodes <= 0) throw std::invalid_argument("evaluate: episodes must be positive");
  if (horizon <= 0) throw std::invalid_argument("evaluate: horizon must be positive");
  locals.check_compatible(env);
  std::vector<double> disc(static_cast<std::size_t>(episodes)), undisc(disc.size());
  std::vector<int> a(static_cast<std::size_t>(env.n_agents));
  const std::span<const double> p0(env.initial_dist.data(), env.initial_dist.size());
  for (int ep = 0; ep < episodes; ++ep) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(ep)));
    int s = static_cast<int>(rng.categorical(p0));
    double g = 0.0, u = 0.0, scale = 1.0;
    for (int t = 0; t < horizon && !env.is_terminal(s); ++t) {
      for (int i = 0; i < env.n_agents; ++i) a[i] = locals.sample(i, env.obs_fn[i][s], rng);
      const auto res = step(env, s, joint_encode(a, env.actions_per_agent), rng);
      g += scale * res.reward;
      u += res.reward;
      scale *= env.discount;
      s = res.next_state;
    }
    disc[ep] = g;
    undisc[ep] = u;
  }
  auto stats = [](const std::vector<double>& x) {
    double m = 0.0;
    for (double v : x) m += v;
    m /= static_cast<double>(x.size());
    double var = 0.0;
    for (double v : x) var += (v - m) * (v - m);
    return std::pair{m, std::sqrt(var / static_cast<double>(x.size()))};
  };
  EvalResult out;
  std::tie(out.mean, out.std) = stats(disc);
  std::tie(out.undiscounted_mean, out.undiscounted_std) = stats(undisc);
  return out;
}

void save_policy(const LocalPolicySet& policy, const std::string& path) {
  nlohmann::json header;
  header["n_agents"] = policy.n_agents();
  std::vector<int> obs, acts;
  for (const auto& t : policy.tables) {
    acts.push_back(static_cast<int>(t.rows()));
    obs.push_back(static_cast<int>(t.cols()));
  }
  header["obs_sizes"] = obs;
  header["actions_per_agent"] = acts;
  std::ostringstream out;
  out << "COMADICE-POLICY v1 " << header.dump() << '\n';
  for (int i = 0; i < policy.n_agents(); ++i) {
    for (Eigen::Index o = 0; o < policy.tables[i].cols(); ++o) {
      out << i << ' ' << o;
      for (Eigen::Index a = 0; a < policy.tables[i].rows(); ++a) {
        out << ' ' << format_real(policy.tables[i](a, o));
      }
      out << '\n';
    }
  }
  write_text_file(path, out.str());
}

LocalPolicySet load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open policy file '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line.rfind("COMADICE-POLICY v1 ", 0) != 0) {
    throw std::runtime_error(path + ":1: missing COMADICE-POLICY v1 header");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line.substr(19));
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ":1: bad header JSON: " + e.what());
  }
  const auto obs = header.at("obs_sizes").get<std::vector<int>>();
  const auto acts = header.at("actions_per_agent").get<std::vector<int>>();
  LocalPolicySet p;
  for (std::size_t i = 0; i < obs.size(); ++i) p.tables.push_back(Eigen::MatrixXd::Zero(acts[i], obs[i]));
  int line_no = 1;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    for (int o = 0; o < obs[i]; ++o) {
      ++line_no;
      if (!std::getline(in, line)) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": truncated policy file");
      }
      LineReader r(line, path, line_no);
      if (r.next_int("agent") != static_cast<int>(i) || r.next_int("obs") != o) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": rows out of order");
      }
      for (int a = 0; a < acts[i]; ++a) p.tables[i](a, o) = r.next_real("prob");
      r.expect_end();
    }
  }
  p.validate();
  return p;
}

}  // namespace comadice
