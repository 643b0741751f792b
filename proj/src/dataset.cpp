#include "comadice/dataset.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "comadice/textio.hpp"
#include "json.hpp"

namespace comadice {

std::vector<std::size_t> OfflineDataset::initial_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < transitions.size(); ++k) {
    if (transitions[k].is_initial) out.push_back(k);
  }
  return out;
}

void OfflineDataset::validate() const {
  if (meta.n_transitions != transitions.size()) {
    throw std::runtime_error("dataset meta declares " + std::to_string(meta.n_transitions) +
                             " transitions but holds " + std::to_string(transitions.size()));
  }
  const std::size_t starts = initial_indices().size();
  if (meta.n_trajectories != starts) {
    throw std::runtime_error("dataset meta declares " + std::to_string(meta.n_trajectories) +
                             " trajectories but holds " + std::to_string(starts));
  }
  if (!transitions.empty() && !transitions.front().is_initial) {
    throw std::runtime_error("dataset does not begin with a trajectory start");
  }
}

OfflineDataset generate_dataset(const MultiAgentMDP& env, const LocalPolicySet& behavior,
                                int n_traj, int horizon, std::uint64_t seed,
                                std::string_view policy_descriptor) {
  if (horizon <= 0) throw std::invalid_argument("generate_dataset: horizon must be positive");
  if (n_traj < 0) throw std::invalid_argument("generate_dataset: negative trajectory count");
  behavior.check_compatible(env);
  behavior.validate();

  OfflineDataset ds;
  ds.meta.env_spec = env.spec;
  ds.meta.policy = std::string(policy_descriptor);
  ds.meta.seed = seed;
  ds.meta.n_agents = env.n_agents;
  ds.meta.actions_per_agent = env.actions_per_agent;
  ds.meta.horizon = horizon;

  const std::span<const double> p0(env.initial_dist.data(), env.initial_dist.size());
  std::vector<double> returns;
  std::vector<int> a(static_cast<std::size_t>(env.n_agents));
  for (int k = 0; k < n_traj; ++k) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    int s = static_cast<int>(rng.categorical(p0));
    double ret = 0.0;
    for (int t = 0; t < horizon; ++t) {
      Transition tr;
      tr.s = s;
      tr.obs = observe(env, s);
      for (int i = 0; i < env.n_agents; ++i) a[i] = behavior.sample(i, tr.obs[i], rng);
      tr.a = JointAction::from_agents(a, env.actions_per_agent);
      const auto res = step(env, s, tr.a.flat, rng);
      tr.r = res.reward;
      tr.s_next = res.next_state;
      tr.obs_next = observe(env, res.next_state);
      tr.terminal = res.done;
      tr.is_initial = t == 0;
      ret += tr.r;
      ds.transitions.push_back(std::move(tr));
      s = res.next_state;
      if (res.done) break;
    }
    returns.push_back(ret);
  }
  ds.meta.n_trajectories = returns.size();
  ds.meta.n_transitions = ds.transitions.size();
  if (!returns.empty()) {
    double m = 0.0;
    for (double r : returns) m += r;
    m /= static_cast<double>(returns.size());
    double var = 0.0;
    for (double r : returns) var += (r - m) * (r - m);
    ds.meta.return_mean = m;
    ds.meta.return_std = std::sqrt(var / static_cast<double>(returns.size()));
  }
  return ds;
}

LocalPolicySet mixture_behavior(const LocalPolicySet& expert, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw std::invalid_argument("mixture_behavior: epsilon must lie in [0, 1]");
  }
  LocalPolicySet out = expert;
  for (auto& t : out.tables) {
    const double u = 1.0 / static_cast<double>(t.rows());
    t = (1.0 - epsilon) * t + Eigen::MatrixXd::Constant(t.rows(), t.cols(), epsilon * u);
  }
  return out;
}

LocalPolicySet make_behavior(const MultiAgentMDP& env, std::string_view descriptor) {
  auto expert = [&] {
    if (env.reference_actions.empty()) {
      throw std::invalid_argument("behavior '" + std::string(descriptor) +
                                  "': this environment has no expert policy");
    }
    return LocalPolicySet::deterministic(env, env.reference_actions);
  };
  if (descriptor == "uniform") return LocalPolicySet::uniform(env);
  if (descriptor == "expert") return expert();
  if (descriptor.rfind("mix:", 0) == 0) {
    const std::string eps(descriptor.substr(4));
    std::size_t used = 0;
    double e = 0.0;
    try {
      e = std::stod(eps, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != eps.size()) {
      throw std::invalid_argument("behavior '" + std::string(descriptor) + "': bad epsilon");
    }
    return mixture_behavior(expert(), e);
  }
  if (descriptor.rfind("file:", 0) == 0) {
    auto p = load_policy(std::string(descriptor.substr(5)));
    p.check_compatible(env);
    return p;
  }
  throw std::invalid_argument("unknown behavior descriptor '" + std::string(descriptor) +
                              "' (uniform | expert | mix:<eps> | file:<path>)");
}

std::string serialize_dataset(const OfflineDataset& ds) {
  nlohmann::json meta;
  meta["env"] = ds.meta.env_spec;
  meta["policy"] = ds.meta.policy;
  meta["seed"] = ds.meta.seed;
  meta["n_agents"] = ds.meta.n_agents;
  meta["actions_per_agent"] = ds.meta.actions_per_agent;
  meta["horizon"] = ds.meta.horizon;
  meta["n_trajectories"] = ds.meta.n_trajectories;
  meta["n_transitions"] = ds.meta.n_transitions;
  meta["return_mean"] = ds.meta.return_mean;
  meta["return_std"] = ds.meta.return_std;

  std::ostringstream out;
  out << "COMADICE-DS v1 " << meta.dump() << '\n';
  for (const auto& t : ds.transitions) {
    out << t.s;
    for (int o : t.obs) out << ' ' << o;
    out << ' ' << t.a.flat << ' ' << format_real(t.r) << ' ' << t.s_next;
    for (int o : t.obs_next) out << ' ' << o;
    out << ' ' << (t.terminal ? 1 : 0) << ' ' << (t.is_initial ? 1 : 0) << '\n';
  }
  return out.str();
}

void save_dataset(const OfflineDataset& ds, const std::string& path) {
  write_text_file(path, serialize_dataset(ds));
}

OfflineDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset '" + path + "'");
  std::string line;
  constexpr std::string_view kMagic = "COMADICE-DS v1 ";
  if (!std::getline(in, line) || line.rfind(kMagic, 0) != 0) {
    throw std::runtime_error(path + ":1: missing COMADICE-DS v1 header");
  }
  OfflineDataset ds;
  try {
    const auto meta = nlohmann::json::parse(line.substr(kMagic.size()));
    ds.meta.env_spec = meta.at("env").get<std::string>();
    ds.meta.policy = meta.at("policy").get<std::string>();
    ds.meta.seed = meta.at("seed").get<std::uint64_t>();
    ds.meta.n_agents = meta.at("n_agents").get<int>();
    ds.meta.actions_per_agent = meta.at("actions_per_agent").get<std::vector<int>>();
    ds.meta.horizon = meta.at("horizon").get<int>();
    ds.meta.n_trajectories = meta.at("n_trajectories").get<std::size_t>();
    ds.meta.n_transitions = meta.at("n_transitions").get<std::size_t>();
    ds.meta.return_mean = meta.at("return_mean").get<double>();
    ds.meta.return_std = meta.at("return_std").get<double>();
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ":1: bad metadata: " + e.what());
  }
  const int n = ds.meta.n_agents;
  if (n <= 0 || static_cast<int>(ds.meta.actions_per_agent.size()) != n) {
    throw std::runtime_error(path + ":1: bad metadata: agent counts disagree");
  }
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    LineReader r(line, path, line_no);
    Transition t;
    t.s = static_cast<int>(r.next_int("s"));
    t.obs.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) t.obs[i] = static_cast<int>(r.next_int("obs[" + std::to_string(i) + "]"));
    const int flat = static_cast<int>(r.next_int("a_flat"));
    try {
      t.a = JointAction::from_flat(flat, ds.meta.actions_per_agent);
    } catch (const std::exception& e) {
      r.fail("a_flat", e.what());
    }
    t.r = r.next_real("r");
    t.s_next = static_cast<int>(r.next_int("s_next"));
    t.obs_next.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      t.obs_next[i] = static_cast<int>(r.next_int("obs_next[" + std::to_string(i) + "]"));
    }
    const auto term = r.next_int("terminal");
    const auto init = r.next_int("is_initial");
    if ((term != 0 && term != 1)) r.fail("terminal", "must be 0 or 1");
    if ((init != 0 && init != 1)) r.fail("is_initial", "must be 0 or 1");
    t.terminal = term == 1;
    t.is_initial = init == 1;
    r.expect_end();
    ds.transitions.push_back(std::move(t));
  }
  if (ds.transitions.size() != ds.meta.n_transitions) {
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected " +
                             std::to_string(ds.meta.n_transitions) + " transitions, found " +
                             std::to_string(ds.transitions.size()) + " (truncated file?)");
  }
  ds.validate();
  return ds;
}

}  // namespace comadice
