#include "comadice/extract.hpp"

#include <cmath>
#include <stdexcept>

namespace comadice {

std::vector<double> dataset_ratios(const OfflineDataset& ds, const DiceParams& p, double alpha,
                                   const FDivergence& div) {
  std::vector<double> w;
  w.reserve(ds.transitions.size());
  for (const auto& t : ds.transitions) {
    w.push_back(w_star(div, p.advantage(t.s, t.obs, t.a.per_agent), alpha));
  }
  return w;
}

namespace {

Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  const Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

void check_weights(std::size_t n, const std::vector<double>& weights) {
  if (weights.size() != n) {
    throw std::invalid_argument("WBC: " + std::to_string(weights.size()) + " weights for " +
                                std::to_string(n) + " samples");
  }
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("WBC: negative weight");
  }
}

double clamped_log(double p) { return std::log(std::max(p, kLogFloor)); }

}  // namespace

Eigen::VectorXd PolicyNet::probs(int obs) const { return softmax(net.forward(obs)); }

Eigen::MatrixXd PolicyNet::table() const {
  Eigen::MatrixXd t(net.n_out(), net.n_inputs());
  for (int o = 0; o < net.n_inputs(); ++o) t.col(o) = probs(o);
  return t;
}

double loss_wbc(const PolicyNet& pi, const std::vector<const Transition*>& batch,
                const std::vector<double>& weights) {
  check_weights(batch.size(), weights);
  double loss = 0.0;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    if (weights[k] == 0.0) continue;
    const Transition& t = *batch[k];
    loss -= weights[k] * clamped_log(pi.probs(t.obs[pi.agent])(t.a.per_agent[pi.agent]));
  }
  return loss;
}

Eigen::VectorXd grad_wbc(const PolicyNet& pi, const std::vector<const Transition*>& batch,
                         const std::vector<double>& weights) {
  check_weights(batch.size(), weights);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(pi.net.params().size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    if (weights[k] == 0.0) continue;
    const Transition& t = *batch[k];
    const int o = t.obs[pi.agent];
    const int a = t.a.per_agent[pi.agent];
    const Eigen::VectorXd p = pi.probs(o);
    if (p(a) < kLogFloor) continue;  // clamped: flat
    Eigen::VectorXd d = weights[k] * p;
    d(a) -= weights[k];
    pi.net.backward(o, d, g);
  }
  return g;
}

Eigen::MatrixXd tabular_wbc_closed_form(const OfflineDataset& ds, const std::vector<double>& weights,
                                        int agent, int n_obs, int n_actions) {
  check_weights(ds.transitions.size(), weights);
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(n_actions, n_obs);
  for (std::size_t k = 0; k < ds.transitions.size(); ++k) {
    const auto& tr = ds.transitions[k];
    t(tr.a.per_agent[agent], tr.obs[agent]) += weights[k];
  }
  for (int o = 0; o < n_obs; ++o) {
    const double z = t.col(o).sum();
    if (z > 0.0) {
      t.col(o) /= z;
    } else {
      t.col(o).setConstant(1.0 / n_actions);
    }
  }
  return t;
}

double local_wbc_objective(const OfflineDataset& ds, const std::vector<double>& weights,
                           const LocalPolicySet& locals, int agent) {
  check_weights(ds.transitions.size(), weights);
  double v = 0.0;
  for (std::size_t k = 0; k < ds.transitions.size(); ++k) {
    if (weights[k] == 0.0) continue;
    const auto& t = ds.transitions[k];
    v += weights[k] * clamped_log(locals.prob(agent, t.obs[agent], t.a.per_agent[agent]));
  }
  return v;
}

double global_wbc_objective(const OfflineDataset& ds, const std::vector<double>& weights,
                            const LocalPolicySet& locals) {
  check_weights(ds.transitions.size(), weights);
  double v = 0.0;
  for (std::size_t k = 0; k < ds.transitions.size(); ++k) {
    if (weights[k] == 0.0) continue;
    const auto& t = ds.transitions[k];
    double p = 1.0;
    for (int i = 0; i < locals.n_agents(); ++i) p *= locals.prob(i, t.obs[i], t.a.per_agent[i]);
    v += weights[k] * clamped_log(p);
  }
  return v;
}

PolicySolver parse_policy_solver(std::string_view token) {
  if (token == "auto") return PolicySolver::Auto;
  if (token == "closed-form") return PolicySolver::ClosedForm;
  if (token == "gradient") return PolicySolver::Gradient;
  throw std::invalid_argument("unknown policy solver '" + std::string(token) +
                              "' (auto | closed-form | gradient)");
}

std::string policy_solver_token(PolicySolver s) {
  switch (s) {
    case PolicySolver::Auto: return "auto";
    case PolicySolver::ClosedForm: return "closed-form";
    case PolicySolver::Gradient: return "gradient";
  }
  return "?";
}

LocalPolicySet train_policies(const OfflineDataset& ds, const std::vector<double>& weights,
                              const MultiAgentMDP& env, const PolicyConfig& cfg) {
  check_weights(ds.transitions.size(), weights);
  if (ds.transitions.empty()) throw std::invalid_argument("train_policies: empty dataset");
  const bool closed = cfg.solver == PolicySolver::ClosedForm ||
                      (cfg.solver == PolicySolver::Auto && cfg.backend == Backend::Tabular);
  LocalPolicySet out;
  if (closed) {
    if (cfg.backend != Backend::Tabular) {
      throw std::invalid_argument("the closed-form policy solver needs the tabular backend");
    }
    for (int i = 0; i < env.n_agents; ++i) {
      out.tables.push_back(
          tabular_wbc_closed_form(ds, weights, i, env.obs_sizes[i], env.actions_per_agent[i]));
    }
    return out;
  }
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("policy lr must be positive");
  if (cfg.steps < 0 || cfg.batch_size < 0) throw std::invalid_argument("bad policy schedule");

  std::vector<const Transition*> all;
  for (const auto& t : ds.transitions) all.push_back(&t);
  for (int i = 0; i < env.n_agents; ++i) {
    Rng rng(derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(i)));
    PolicyNet pi{i, IndexNet(cfg.backend, env.obs_sizes[i], env.actions_per_agent[i], cfg.hidden)};
    pi.net.init_uniform(rng);
    Eigen::VectorXd m = Eigen::VectorXd::Zero(pi.net.params().size()), v = m;
    std::vector<const Transition*> batch;
    std::vector<double> bw;
    for (int step = 1; step <= cfg.steps; ++step) {
      if (cfg.batch_size == 0) {
        batch = all;
        bw = weights;
      } else {
        batch.clear();
        bw.clear();
        for (int k = 0; k < cfg.batch_size; ++k) {
          const std::size_t j = rng.below(all.size());
          batch.push_back(all[j]);
          bw.push_back(weights[j]);
        }
      }
      const Eigen::VectorXd g = grad_wbc(pi, batch, bw) / static_cast<double>(batch.size());
      if (cfg.optimizer == OptimizerKind::Sgd) {
        pi.net.params() -= cfg.lr * g;
      } else {
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g.cwiseAbs2();
        const double c1 = 1.0 - std::pow(0.9, step), c2 = 1.0 - std::pow(0.999, step);
        pi.net.params().array() -= cfg.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + 1e-8);
      }
    }
    out.tables.push_back(pi.table());
  }
  return out;
}

}  // namespace comadice
