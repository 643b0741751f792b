#include "comadice/mamdp.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace comadice {

int radix_product(std::span<const int> radices) {
  int n = 1;
  for (int r : radices) n *= r;
  return n;
}

int joint_encode(std::span<const int> per_agent, std::span<const int> radices) {
  if (per_agent.size() != radices.size()) {
    throw std::invalid_argument("joint_encode: expected " + std::to_string(radices.size()) +
                                " actions, got " + std::to_string(per_agent.size()));
  }
  int flat = 0;
  for (std::size_t i = 0; i < radices.size(); ++i) {
    if (per_agent[i] < 0 || per_agent[i] >= radices[i]) {
      throw std::out_of_range("joint_encode: action " + std::to_string(per_agent[i]) +
                              " of agent " + std::to_string(i) + " outside [0, " +
                              std::to_string(radices[i]) + ")");
    }
    flat = flat * radices[i] + per_agent[i];
  }
  return flat;
}

std::vector<int> joint_decode(int flat, std::span<const int> radices) {
  if (flat < 0 || flat >= radix_product(radices)) {
    throw std::out_of_range("joint_decode: flat index " + std::to_string(flat) + " out of range");
  }
  std::vector<int> out(radices.size());
  for (std::size_t k = radices.size(); k-- > 0;) {
    out[k] = flat % radices[k];
    flat /= radices[k];
  }
  return out;
}

void MultiAgentMDP::validate() const {
  const int na = n_joint();
  if (n_agents <= 0 || static_cast<int>(actions_per_agent.size()) != n_agents) {
    throw std::invalid_argument("MultiAgentMDP: actions_per_agent must list one count per agent");
  }
  if (n_states <= 0) throw std::invalid_argument("MultiAgentMDP: no states");
  if (!(discount >= 0.0 && discount < 1.0)) {
    throw std::invalid_argument("MultiAgentMDP: discount must lie in [0, 1), got " +
                                std::to_string(discount));
  }
  if (transition.rows() != static_cast<Eigen::Index>(n_states) * na ||
      transition.cols() != n_states) {
    throw std::invalid_argument("MultiAgentMDP: transition shape mismatch");
  }
  if (reward.rows() != n_states || reward.cols() != na) {
    throw std::invalid_argument("MultiAgentMDP: reward shape mismatch");
  }
  if (initial_dist.size() != n_states || (initial_dist.array() < 0.0).any() ||
      std::abs(initial_dist.sum() - 1.0) > 1e-12) {
    throw std::invalid_argument("MultiAgentMDP: initial distribution must be a probability vector");
  }
  for (Eigen::Index r = 0; r < transition.outerSize(); ++r) {
    double sum = 0.0;
    for (SparseRowMatrix::InnerIterator it(transition, r); it; ++it) {
      if (it.value() < 0.0) throw std::invalid_argument("MultiAgentMDP: negative transition");
      sum += it.value();
    }
    if (std::abs(sum - 1.0) > 1e-12) {
      throw std::invalid_argument("MultiAgentMDP: transition row " + std::to_string(r) +
                                  " sums to " + std::to_string(sum));
    }
  }
  if (static_cast<int>(obs_fn.size()) != n_agents ||
      static_cast<int>(obs_sizes.size()) != n_agents) {
    throw std::invalid_argument("MultiAgentMDP: observation map must cover every agent");
  }
  for (int i = 0; i < n_agents; ++i) {
    if (static_cast<int>(obs_fn[i].size()) != n_states) {
      throw std::invalid_argument("MultiAgentMDP: observation map of agent " + std::to_string(i) +
                                  " is not total");
    }
    for (int o : obs_fn[i]) {
      if (o < 0 || o >= obs_sizes[i]) {
        throw std::invalid_argument("MultiAgentMDP: observation index out of range");
      }
    }
  }
  if (static_cast<int>(terminal.size()) != n_states) {
    throw std::invalid_argument("MultiAgentMDP: terminal flags must cover every state");
  }
  for (int s = 0; s < n_states; ++s) {
    if (!is_terminal(s)) continue;
    for (int a = 0; a < na; ++a) {
      if (transition.coeff(row(s, a), s) != 1.0 || reward(s, a) != 0.0) {
        throw std::invalid_argument("MultiAgentMDP: terminal state " + std::to_string(s) +
                                    " is not absorbing with zero reward");
      }
    }
  }
}

std::vector<int> observe(const MultiAgentMDP& env, int s) {
  if (s < 0 || s >= env.n_states) throw std::out_of_range("observe: state out of range");
  std::vector<int> out(static_cast<std::size_t>(env.n_agents));
  for (int i = 0; i < env.n_agents; ++i) out[i] = env.obs_fn[i][s];
  return out;
}

StepResult step(const MultiAgentMDP& env, int s, int joint_action, Rng& rng) {
  if (env.is_terminal(s)) return {s, 0.0, true};
  const Eigen::Index r = env.row(s, joint_action);
  double u = rng.uniform();
  int next = -1;
  for (SparseRowMatrix::InnerIterator it(env.transition, r); it; ++it) {
    next = static_cast<int>(it.col());
    if (u < it.value()) break;
    u -= it.value();
  }
  return {next, env.reward(s, joint_action), env.is_terminal(next)};
}

MultiAgentMDP build_matrix_game(std::span<const int> actions_per_agent,
                                const Eigen::VectorXd& payoff, int n_rounds, double gamma) {
  if (n_rounds <= 0) throw std::invalid_argument("matrix game: n_rounds must be positive");
  if (!payoff.allFinite()) throw std::invalid_argument("matrix game: payoff must be finite");
  MultiAgentMDP env;
  env.n_agents = static_cast<int>(actions_per_agent.size());
  env.actions_per_agent.assign(actions_per_agent.begin(), actions_per_agent.end());
  const int na = env.n_joint();
  if (payoff.size() != na) throw std::invalid_argument("matrix game: payoff size mismatch");
  env.n_states = n_rounds + 1;
  env.discount = gamma;
  env.transition.resize(static_cast<Eigen::Index>(env.n_states) * na, env.n_states);
  std::vector<Eigen::Triplet<double>> trip;
  env.reward = Eigen::MatrixXd::Zero(env.n_states, na);
  for (int s = 0; s < env.n_states; ++s) {
    for (int a = 0; a < na; ++a) {
      const int next = s < n_rounds ? s + 1 : s;
      trip.emplace_back(static_cast<int>(env.row(s, a)), next, 1.0);
      if (s < n_rounds) env.reward(s, a) = payoff(a);
    }
  }
  env.transition.setFromTriplets(trip.begin(), trip.end());
  env.initial_dist = Eigen::VectorXd::Zero(env.n_states);
  env.initial_dist(0) = 1.0;
  env.terminal.assign(static_cast<std::size_t>(env.n_states), 0);
  env.terminal.back() = 1;
  std::vector<int> ident(static_cast<std::size_t>(env.n_states));
  std::iota(ident.begin(), ident.end(), 0);
  env.obs_fn.assign(static_cast<std::size_t>(env.n_agents), ident);
  env.obs_sizes.assign(static_cast<std::size_t>(env.n_agents), env.n_states);

  Eigen::Index best = 0;
  payoff.maxCoeff(&best);
  auto best_a = joint_decode(static_cast<int>(best), env.actions_per_agent);
  env.reference_actions.resize(static_cast<std::size_t>(env.n_agents));
  for (int i = 0; i < env.n_agents; ++i) {
    env.reference_actions[i].assign(static_cast<std::size_t>(env.n_states), best_a[i]);
  }
  env.validate();
  return env;
}

MultiAgentMDP build_matrix_game(const Eigen::MatrixXd& payoff, int n_rounds, double gamma) {
  const std::vector<int> radices{static_cast<int>(payoff.rows()), static_cast<int>(payoff.cols())};
  Eigen::VectorXd flat(payoff.size());
  for (Eigen::Index i = 0; i < payoff.rows(); ++i) {
    for (Eigen::Index j = 0; j < payoff.cols(); ++j) flat(i * payoff.cols() + j) = payoff(i, j);
  }
  return build_matrix_game(radices, flat, n_rounds, gamma);
}

int grid_encode_state(std::span<const int> cells, int n_cells) {
  int s = 0;
  for (int c : cells) s = s * n_cells + c;
  return s;
}

std::vector<int> grid_decode_state(int s, int n_agents, int n_cells) {
  std::vector<int> cells(static_cast<std::size_t>(n_agents));
  for (int k = n_agents; k-- > 0;) {
    cells[k] = s % n_cells;
    s /= n_cells;
  }
  return cells;
}

namespace {

int grid_move(int cell, int move, int width, int height) {
  int x = cell % width;
  int y = cell / width;
  switch (move) {
    case kUp: y = std::max(0, y - 1); break;
    case kDown: y = std::min(height - 1, y + 1); break;
    case kLeft: x = std::max(0, x - 1); break;
    case kRight: x = std::min(width - 1, x + 1); break;
    default: break;
  }
  return y * width + x;
}

int grid_expert_move(int cell, int goal, int width) {
  const int x = cell % width, y = cell / width;
  const int gx = goal % width, gy = goal / width;
  if (x < gx) return kRight;
  if (x > gx) return kLeft;
  if (y < gy) return kDown;
  if (y > gy) return kUp;
  return kStay;
}

}  // namespace

MultiAgentMDP build_gridworld(const GridConfig& cfg) {
  if (cfg.width <= 0 || cfg.height <= 0 || cfg.n_agents <= 0) {
    throw std::invalid_argument("gridworld: dimensions and agent count must be positive");
  }
  const int n_cells = cfg.width * cfg.height;
  const double size = std::pow(static_cast<double>(n_cells), cfg.n_agents);
  if (size > kMaxTabularStates) {
    throw std::invalid_argument("gridworld: state space of " + std::to_string(size) +
                                " states exceeds the tabular bound of " +
                                std::to_string(kMaxTabularStates));
  }
  const int corners[4] = {0, n_cells - cfg.width, cfg.width - 1, n_cells - 1};
  std::vector<int> starts = cfg.starts;
  std::vector<int> goals = cfg.goals;
  if (starts.empty()) {
    for (int i = 0; i < cfg.n_agents; ++i) starts.push_back(corners[i % 4]);
  }
  if (goals.empty()) {
    for (int i = 0; i < cfg.n_agents; ++i) goals.push_back(corners[3 - i % 4]);
  }
  if (static_cast<int>(starts.size()) != cfg.n_agents ||
      static_cast<int>(goals.size()) != cfg.n_agents) {
    throw std::invalid_argument("gridworld: need one start and one goal per agent");
  }
  for (int c : goals) {
    if (c < 0 || c >= n_cells) throw std::invalid_argument("gridworld: goal off the grid");
  }
  for (int c : starts) {
    if (c < 0 || c >= n_cells) throw std::invalid_argument("gridworld: start off the grid");
  }

  MultiAgentMDP env;
  env.n_agents = cfg.n_agents;
  env.n_states = static_cast<int>(size);
  env.actions_per_agent.assign(static_cast<std::size_t>(cfg.n_agents), kGridActions);
  env.discount = cfg.gamma;
  const int na = env.n_joint();
  env.reward = Eigen::MatrixXd::Zero(env.n_states, na);
  env.terminal.assign(static_cast<std::size_t>(env.n_states), 0);
  env.obs_fn.assign(static_cast<std::size_t>(cfg.n_agents),
                    std::vector<int>(static_cast<std::size_t>(env.n_states)));
  env.obs_sizes.assign(static_cast<std::size_t>(cfg.n_agents), n_cells);

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(env.n_states) * na);
  std::vector<int> next_cells(static_cast<std::size_t>(cfg.n_agents));
  for (int s = 0; s < env.n_states; ++s) {
    const auto cells = grid_decode_state(s, cfg.n_agents, n_cells);
    bool all_parked = true;
    for (int i = 0; i < cfg.n_agents; ++i) {
      env.obs_fn[i][s] = cells[i];
      all_parked = all_parked && cells[i] == goals[i];
    }
    env.terminal[s] = all_parked ? 1 : 0;
    for (int a = 0; a < na; ++a) {
      if (all_parked) {
        trip.emplace_back(static_cast<int>(env.row(s, a)), s, 1.0);
        continue;
      }
      const auto moves = joint_decode(a, env.actions_per_agent);
      double r = 0.0;
      for (int i = 0; i < cfg.n_agents; ++i) {
        if (cells[i] == goals[i]) {
          next_cells[i] = cells[i];
        } else {
          next_cells[i] = grid_move(cells[i], moves[i], cfg.width, cfg.height);
          if (next_cells[i] == goals[i]) r += 1.0;
        }
      }
      env.reward(s, a) = r;
      trip.emplace_back(static_cast<int>(env.row(s, a)), grid_encode_state(next_cells, n_cells),
                        1.0);
    }
  }
  env.transition.resize(static_cast<Eigen::Index>(env.n_states) * na, env.n_states);
  env.transition.setFromTriplets(trip.begin(), trip.end());
  env.initial_dist = Eigen::VectorXd::Zero(env.n_states);
  env.initial_dist(grid_encode_state(starts, n_cells)) = 1.0;

  env.reference_actions.resize(static_cast<std::size_t>(cfg.n_agents));
  for (int i = 0; i < cfg.n_agents; ++i) {
    env.reference_actions[i].resize(static_cast<std::size_t>(n_cells));
    for (int c = 0; c < n_cells; ++c) {
      env.reference_actions[i][c] = grid_expert_move(c, goals[i], cfg.width);
    }
  }
  env.validate();
  return env;
}

Eigen::MatrixXd read_payoff_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open payoff file '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) {
      try {
        row.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw std::runtime_error("payoff file '" + path + "': bad real '" + tok + "'");
      }
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("payoff file '" + path + "' is empty");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) {
      throw std::runtime_error("payoff file '" + path + "': ragged row " + std::to_string(i + 1));
    }
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  }
  return m;
}

namespace {

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.emplace_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

template <typename T>
T parse_number(const std::string& tok, std::string_view what) {
  T value{};
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw std::invalid_argument("env spec: bad " + std::string(what) + " '" + tok + "'");
  }
  return value;
}

}  // namespace

MultiAgentMDP make_env(std::string_view spec) {
  auto parts = split(spec, ':');
  MultiAgentMDP env;
  if (parts.size() == 4 && parts[0] == "matrix") {
    env = build_matrix_game(read_payoff_file(parts[1]), parse_number<int>(parts[2], "rounds"),
                            parse_number<double>(parts[3], "gamma"));
  } else if (parts.size() == 4 && parts[0] == "grid") {
    auto dims = split(parts[1], 'x');
    if (dims.size() != 2) throw std::invalid_argument("env spec: grid size must be <W>x<H>");
    GridConfig cfg;
    cfg.width = parse_number<int>(dims[0], "width");
    cfg.height = parse_number<int>(dims[1], "height");
    cfg.n_agents = parse_number<int>(parts[2], "agents");
    cfg.gamma = parse_number<double>(parts[3], "gamma");
    env = build_gridworld(cfg);
  } else {
    throw std::invalid_argument("env spec '" + std::string(spec) +
                                "' must be matrix:<payoff-file>:<rounds>:<gamma> or "
                                "grid:<W>x<H>:<agents>:<gamma>");
  }
  env.spec = std::string(spec);
  return env;
}

}  // namespace comadice
