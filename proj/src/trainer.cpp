#include "comadice/trainer.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include "comadice/textio.hpp"
#include "json.hpp"

namespace comadice {

std::vector<ParamBlock> DiceParams::theta_blocks() {
  auto out = theta.blocks("theta");
  if (separate_mixers) {
    for (auto& b : theta_adv.blocks("theta_adv")) out.push_back(b);
  }
  return out;
}

std::vector<ParamBlock> DiceParams::all_blocks() {
  auto out = q_blocks();
  for (auto& b : theta_blocks()) out.push_back(b);
  for (auto& b : nu_blocks()) out.push_back(b);
  return out;
}

double DiceParams::nu_tot(int s, std::span<const int> obs) const {
  return mix(theta, s, nu.values(obs));
}

double DiceParams::advantage(int s, std::span<const int> obs, std::span<const int> actions) const {
  return advantage_tot(q, nu, adv_mixer(), s, obs, actions);
}

DiceParams zeros_like(const DiceParams& p) {
  DiceParams z = p;
  z.nu = zeros_like(p.nu);
  z.q = zeros_like(p.q);
  z.theta = zeros_like(p.theta);
  if (p.separate_mixers) z.theta_adv = zeros_like(p.theta_adv);
  return z;
}

Eigen::VectorXd flatten(const std::vector<ParamBlock>& blocks) {
  Eigen::Index n = 0;
  for (const auto& b : blocks) n += b.values->size();
  Eigen::VectorXd out(n);
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    out.segment(at, b.values->size()) = *b.values;
    at += b.values->size();
  }
  return out;
}

void assign(const std::vector<ParamBlock>& blocks, const Eigen::VectorXd& flat) {
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    if (at + b.values->size() > flat.size()) throw std::invalid_argument("assign: vector too short");
    *b.values = flat.segment(at, b.values->size());
    at += b.values->size();
  }
  if (at != flat.size()) throw std::invalid_argument("assign: vector too long");
}

OptimizerKind parse_optimizer(std::string_view token) {
  if (token == "sgd") return OptimizerKind::Sgd;
  if (token == "adam") return OptimizerKind::Adam;
  throw std::invalid_argument("unknown optimizer '" + std::string(token) + "' (sgd | adam)");
}

std::string optimizer_token(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

NuGradient parse_nu_gradient(std::string_view token) {
  if (token == "bootstrap") return NuGradient::Bootstrap;
  if (token == "semi") return NuGradient::Semi;
  throw std::invalid_argument("unknown nu_gradient '" + std::string(token) + "' (bootstrap | semi)");
}

std::string nu_gradient_token(NuGradient g) {
  return g == NuGradient::Bootstrap ? "bootstrap" : "semi";
}

void TrainConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw std::invalid_argument(std::string(name) + " must be positive and finite");
    }
  };
  positive(alpha, "alpha");
  positive(lr_q, "lr_q");
  positive(lr_nu, "lr_nu");
  positive(lr_theta, "lr_theta");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in [0, 1)");
  if (batch_size < 0) throw std::invalid_argument("batch_size must be >= 0");
  if (steps < 0) throw std::invalid_argument("steps must be >= 0");
  if (mixer_depth != 1 && mixer_depth != 2) throw std::invalid_argument("mixer depth must be 1 or 2");
  if (fixed_sum_mixer && mixer_depth != 1) {
    throw std::invalid_argument("the fixed sum mixer has depth 1");
  }
  if (backend == Backend::Mlp && hidden <= 0) throw std::invalid_argument("hidden must be positive");
  if ((backend == Backend::Mlp || mixer_depth == 2) && hidden_mixer <= 0) {
    throw std::invalid_argument("hidden_mixer must be positive");
  }
  if (eval_every < 0) throw std::invalid_argument("eval_every must be >= 0");
  if (optimizer == OptimizerKind::Adam) {
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
      throw std::invalid_argument("Adam betas must lie in [0, 1)");
    }
    positive(adam_eps, "adam_eps");
  }
}

std::string train_log_csv(const TrainLog& log) {
  std::ostringstream out;
  out << kTrainLogHeader << '\n';
  for (const auto& r : log.records) {
    out << r.step << ',' << format_real(r.loss_nu) << ',' << format_real(r.loss_q) << ','
        << format_real(r.w_mean) << ',' << format_real(r.w_max) << ','
        << format_real(r.w_clamped_frac) << ',' << format_real(r.eval_return_mean) << ','
        << format_real(r.eval_return_std) << '\n';
  }
  return out.str();
}

namespace {

Batch merge(std::vector<const Transition*> items) {
  using Key = std::tuple<int, int, double, int, bool, bool>;
  std::map<Key, std::size_t> index;
  Batch out;
  for (const Transition* t : items) {
    const Key key{t->s, t->a.flat, t->r, t->s_next, t->terminal, t->is_initial};
    auto [it, fresh] = index.emplace(key, out.items.size());
    if (fresh) {
      out.items.push_back(t);
      out.weights.push_back(1.0);
    } else {
      out.weights[it->second] += 1.0;
    }
  }
  return out;
}

double total_weight(const Batch& b) {
  double w = 0.0;
  for (std::size_t k = 0; k < b.size(); ++k) w += b.weight(k);
  return w;
}

/// Adds d_out * d nu_tot(s) into the theta and psi_nu parts of `g`.
void nu_tot_backward(const DiceParams& p, int s, std::span<const int> obs, double d_out,
                     DiceParams& g) {
  const Eigen::VectorXd locals = p.nu.values(obs);
  MixTrace trace;
  mix(p.theta, s, locals, trace);
  Eigen::VectorXd d_locals = Eigen::VectorXd::Zero(locals.size());
  mix_backward(p.theta, s, locals, trace, d_out, &d_locals, &g.theta);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    p.nu.agents[i].backward(obs[i], Eigen::VectorXd::Constant(1, d_locals(i)),
                            g.nu.agents[i].params());
  }
}

/// Adds d_out * d A(s, a) into `g`; the psi_q part only when `into_q`, the
/// (theta, psi_nu) parts only when `into_nu`.
void advantage_backward(const DiceParams& p, const Transition& t, double d_out, DiceParams& g,
                        bool into_q, bool into_nu) {
  const Eigen::VectorXd locals =
      p.q.values(t.obs, t.a.per_agent) - p.nu.values(t.obs);
  MixTrace trace;
  mix(p.adv_mixer(), t.s, locals, trace);
  Eigen::VectorXd d_locals = Eigen::VectorXd::Zero(locals.size());
  mix_backward(p.adv_mixer(), t.s, locals, trace, d_out, &d_locals,
               into_nu ? &g.adv_mixer() : nullptr);
  for (std::size_t i = 0; i < t.obs.size(); ++i) {
    if (into_q) {
      Eigen::VectorXd d = Eigen::VectorXd::Zero(p.q.agents[i].n_out());
      d(t.a.per_agent[i]) = d_locals(i);
      p.q.agents[i].backward(t.obs[i], d, g.q.agents[i].params());
    }
    if (into_nu) {
      p.nu.agents[i].backward(t.obs[i], Eigen::VectorXd::Constant(1, -d_locals(i)),
                              g.nu.agents[i].params());
    }
  }
}

double q_residual(const DiceParams& p, const Transition& t, const TrainConfig& cfg) {
  const double next = t.terminal ? 0.0 : p.nu_tot(t.s_next, t.obs_next);
  return p.advantage(t.s, t.obs, t.a.per_agent) - (t.r + cfg.gamma * next - p.nu_tot(t.s, t.obs));
}

struct NuPass {
  double value = 0.0;
  double w_mean = 0.0, w_max = 0.0, w_clamped = 0.0;
};

/// Value of loss_nu plus (optionally) its analytic gradient and w statistics.
NuPass nu_pass(const DiceParams& p, const Batch& batch, const Batch& pool, const TrainConfig& cfg,
               const DiceParams* anchor, DiceParams* grad) {
  if (batch.empty()) throw std::invalid_argument("loss_nu: empty batch");
  NuPass out;
  // Initial-state term.
  Batch starts;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    if (batch.items[k]->is_initial) {
      starts.items.push_back(batch.items[k]);
      starts.weights.push_back(batch.weight(k));
    }
  }
  const Batch& s0 = starts.empty() ? pool : starts;
  if (s0.empty()) throw std::invalid_argument("loss_nu: no trajectory starts in batch or pool");
  const double w0 = total_weight(s0);
  for (std::size_t k = 0; k < s0.size(); ++k) {
    const Transition& t = *s0.items[k];
    const double c = (1.0 - cfg.gamma) * s0.weight(k) / w0;
    out.value += c * p.nu_tot(t.s, t.obs);
    if (grad) nu_tot_backward(p, t.s, t.obs, c, *grad);
  }
  // Conjugate term.
  const double wb = total_weight(batch);
  double clamped = 0.0;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const Transition& t = *batch.items[k];
    const double c = batch.weight(k) / wb;
    double adv = p.advantage(t.s, t.obs, t.a.per_agent);
    if (anchor && !t.terminal) {
      adv += cfg.gamma * (p.nu_tot(t.s_next, t.obs_next) - anchor->nu_tot(t.s_next, t.obs_next));
    }
    const double y = adv / cfg.alpha;
    const double fc = f_conjugate(cfg.divergence, y);
    if (!std::isfinite(fc)) {
      throw std::domain_error("loss_nu: non-finite conjugate at sample " + std::to_string(k) +
                              " (s=" + std::to_string(t.s) + ", a=" + std::to_string(t.a.flat) +
                              ", A=" + format_real(adv) + ")");
    }
    out.value += c * cfg.alpha * fc;
    const double w = f_conjugate_prime(cfg.divergence, y);
    out.w_mean += c * w;
    out.w_max = std::max(out.w_max, w);
    if (w == 0.0) clamped += c;
    if (grad && w != 0.0) {
      advantage_backward(p, t, c * w, *grad, false, true);
      if (cfg.nu_gradient == NuGradient::Bootstrap && !t.terminal) {
        nu_tot_backward(p, t.s_next, t.obs_next, c * w * cfg.gamma, *grad);
      }
    }
  }
  out.w_clamped = clamped;
  return out;
}

class GroupOptimizer {
 public:
  GroupOptimizer(const TrainConfig& cfg, double lr) : cfg_(cfg), lr_(lr) {}

  void step(const std::vector<ParamBlock>& params, const std::vector<ParamBlock>& grads) {
    if (cfg_.optimizer == OptimizerKind::Sgd) {
      for (std::size_t b = 0; b < params.size(); ++b) *params[b].values -= lr_ * *grads[b].values;
      return;
    }
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.push_back(Eigen::VectorXd::Zero(p.values->size()));
        v_.push_back(Eigen::VectorXd::Zero(p.values->size()));
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.adam_beta1, t_);
    const double c2 = 1.0 - std::pow(cfg_.adam_beta2, t_);
    for (std::size_t b = 0; b < params.size(); ++b) {
      const Eigen::VectorXd& g = *grads[b].values;
      m_[b] = cfg_.adam_beta1 * m_[b] + (1.0 - cfg_.adam_beta1) * g;
      v_[b] = cfg_.adam_beta2 * v_[b] + (1.0 - cfg_.adam_beta2) * g.cwiseAbs2();
      *params[b].values -= (lr_ * (m_[b] / c1).array() /
                            ((v_[b] / c2).array().sqrt() + cfg_.adam_eps)).matrix();
    }
  }

 private:
  const TrainConfig& cfg_;
  double lr_;
  int t_ = 0;
  std::vector<Eigen::VectorXd> m_, v_;
};

}  // namespace

Batch full_batch(const OfflineDataset& ds) {
  std::vector<const Transition*> items;
  items.reserve(ds.transitions.size());
  for (const auto& t : ds.transitions) items.push_back(&t);
  return merge(std::move(items));
}

Batch initial_pool(const OfflineDataset& ds) {
  std::vector<const Transition*> items;
  for (const auto& t : ds.transitions) {
    if (t.is_initial) items.push_back(&t);
  }
  return merge(std::move(items));
}

double loss_q(const DiceParams& p, const Batch& batch, const TrainConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("loss_q: empty batch");
  const double wb = total_weight(batch);
  double loss = 0.0;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const double e = q_residual(p, *batch.items[k], cfg);
    loss += batch.weight(k) / wb * e * e;
  }
  return loss;
}

DiceParams grad_q(const DiceParams& p, const Batch& batch, const TrainConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("loss_q: empty batch");
  DiceParams g = zeros_like(p);
  const double wb = total_weight(batch);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const Transition& t = *batch.items[k];
    const double e = q_residual(p, t, cfg);
    advantage_backward(p, t, 2.0 * batch.weight(k) / wb * e, g, true, false);
  }
  return g;
}

double loss_nu(const DiceParams& p, const Batch& batch, const Batch& pool, const TrainConfig& cfg,
               const DiceParams* anchor) {
  return nu_pass(p, batch, pool, cfg, anchor, nullptr).value;
}

DiceParams grad_nu_analytic(const DiceParams& p, const Batch& batch, const Batch& pool,
                            const TrainConfig& cfg) {
  DiceParams g = zeros_like(p);
  nu_pass(p, batch, pool, cfg, nullptr, &g);
  return g;
}

DiceParams init_params(const MultiAgentMDP& env, const TrainConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0));
  Rng* mlp_rng = cfg.backend == Backend::Mlp ? &rng : nullptr;
  DiceParams p;
  p.nu = AgentValueParams::make(cfg.backend, env.obs_sizes, cfg.hidden, mlp_rng);
  p.q = AgentQParams::make(cfg.backend, env.obs_sizes, env.actions_per_agent, cfg.hidden, mlp_rng);
  auto mixer = [&] {
    return cfg.fixed_sum_mixer
               ? MixerParams::sum(env.n_agents, env.n_states)
               : MixerParams::make(cfg.mixer_depth, env.n_agents, env.n_states, cfg.backend,
                                   cfg.hidden_mixer, cfg.mixer_activation, rng);
  };
  p.theta = mixer();
  p.separate_mixers = cfg.separate_mixers;
  if (cfg.separate_mixers) p.theta_adv = mixer();
  return p;
}

double ratio_at(const DiceParams& p, const TrainConfig& cfg, int s, std::span<const int> obs,
                std::span<const int> actions) {
  return w_star(cfg.divergence, p.advantage(s, obs, actions), cfg.alpha);
}

TrainResult train_ratio(const OfflineDataset& ds, const MultiAgentMDP& env, const TrainConfig& cfg,
                        const TrainHooks& hooks) {
  cfg.validate();
  if (ds.transitions.empty()) throw std::invalid_argument("train_ratio: empty dataset");
  if (std::abs(cfg.gamma - env.discount) > 1e-12) {
    throw std::invalid_argument("train_ratio: gamma " + format_real(cfg.gamma) +
                                " differs from the environment's " + format_real(env.discount));
  }
  if (ds.meta.n_agents != env.n_agents || ds.meta.actions_per_agent != env.actions_per_agent) {
    throw std::invalid_argument("train_ratio: dataset and environment disagree on agents/actions");
  }
  for (const auto& t : ds.transitions) {
    if (t.s < 0 || t.s >= env.n_states || t.s_next < 0 || t.s_next >= env.n_states) {
      throw std::invalid_argument("train_ratio: dataset state outside the environment");
    }
  }

  TrainResult res{init_params(env, cfg), {}};
  DiceParams& p = res.params;
  const Batch pool = initial_pool(ds);
  const Batch everything = cfg.batch_size == 0 ? full_batch(ds) : Batch{};
  Rng rng(derive_seed(cfg.seed, 1));
  GroupOptimizer opt_q(cfg, cfg.lr_q), opt_theta(cfg, cfg.lr_theta), opt_nu(cfg, cfg.lr_nu);

  for (int step = 1; step <= cfg.steps; ++step) {
    Batch sampled;
    if (cfg.batch_size > 0) {
      sampled.items.reserve(static_cast<std::size_t>(cfg.batch_size));
      for (int k = 0; k < cfg.batch_size; ++k) {
        sampled.items.push_back(&ds.transitions[rng.below(ds.transitions.size())]);
      }
    }
    const Batch& batch = cfg.batch_size == 0 ? everything : sampled;

    TrainRecord rec;
    rec.step = step;
    rec.loss_q = loss_q(p, batch, cfg);
    {
      DiceParams g = grad_q(p, batch, cfg);
      opt_q.step(p.q_blocks(), g.q_blocks());
      if (hooks.on_update) hooks.on_update("psi_q", p);
    }
    NuPass pass;
    if (!cfg.fixed_sum_mixer) {
      DiceParams g = zeros_like(p);
      pass = nu_pass(p, batch, pool, cfg, nullptr, &g);
      opt_theta.step(p.theta_blocks(), g.theta_blocks());
      if (hooks.on_update) hooks.on_update("theta", p);
    }
    {
      DiceParams g = zeros_like(p);
      const NuPass at_nu = nu_pass(p, batch, pool, cfg, nullptr, &g);
      if (cfg.fixed_sum_mixer) pass = at_nu;
      opt_nu.step(p.nu_blocks(), g.nu_blocks());
      if (hooks.on_update) hooks.on_update("psi_nu", p);
    }
    rec.loss_nu = pass.value;
    rec.w_mean = pass.w_mean;
    rec.w_max = pass.w_max;
    rec.w_clamped_frac = pass.w_clamped;

    const bool diverged = !std::isfinite(pass.value) || pass.value > 1e6;
    const bool log_now =
        diverged || step == cfg.steps || (cfg.eval_every > 0 && step % cfg.eval_every == 0);
    if (log_now) {
      if (hooks.evaluate && !diverged) {
        const EvalResult ev = hooks.evaluate(p);
        rec.eval_return_mean = ev.mean;
        rec.eval_return_std = ev.std;
      }
      res.log.records.push_back(rec);
    }
    if (diverged) {
      throw TrainingDiverged("train_ratio: loss_nu diverged to " + format_real(pass.value) +
                                 " at step " + std::to_string(step),
                             res.log);
    }
  }
  return res;
}

void save_params(const DiceParams& p, const TrainConfig& cfg, const std::string& path) {
  DiceParams copy = p;
  const auto blocks = copy.all_blocks();
  nlohmann::json h;
  h["backend"] = backend_token(cfg.backend);
  h["hidden"] = cfg.hidden;
  h["hidden_mixer"] = cfg.hidden_mixer;
  h["mixer_depth"] = cfg.mixer_depth;
  h["mixer_activation"] = activation_token(cfg.mixer_activation);
  h["fixed_sum_mixer"] = cfg.fixed_sum_mixer;
  h["separate_mixers"] = p.separate_mixers;
  h["n_states"] = p.theta.w1.n_inputs();
  std::vector<int> obs, acts;
  for (const auto& net : p.q.agents) {
    obs.push_back(net.n_inputs());
    acts.push_back(net.n_out());
  }
  h["obs_sizes"] = obs;
  h["actions_per_agent"] = acts;
  h["alpha"] = cfg.alpha;
  h["divergence"] = divergence_token(cfg.divergence);
  h["kl_plain_generator"] = cfg.divergence.kl_plain_generator;
  nlohmann::json sizes = nlohmann::json::array();
  for (const auto& b : blocks) sizes.push_back({{"name", b.name}, {"size", b.values->size()}});
  h["blocks"] = sizes;

  std::ostringstream out;
  out << "COMADICE-PARAMS v1 " << h.dump() << '\n';
  for (const auto& b : blocks) {
    out << b.name;
    for (Eigen::Index i = 0; i < b.values->size(); ++i) out << ' ' << format_real((*b.values)(i));
    out << '\n';
  }
  write_text_file(path, out.str());
}

LoadedParams load_params(const std::string& path, const MultiAgentMDP& env) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open parameter file '" + path + "'");
  std::string line;
  constexpr std::string_view kMagic = "COMADICE-PARAMS v1 ";
  if (!std::getline(in, line) || line.rfind(kMagic, 0) != 0) {
    throw std::runtime_error(path + ":1: missing COMADICE-PARAMS v1 header");
  }
  TrainConfig cfg;
  LoadedParams out;
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(line.substr(kMagic.size()));
    cfg.backend = parse_backend(h.at("backend").get<std::string>());
    cfg.hidden = h.at("hidden").get<int>();
    cfg.hidden_mixer = h.at("hidden_mixer").get<int>();
    cfg.mixer_depth = h.at("mixer_depth").get<int>();
    cfg.mixer_activation = parse_activation(h.at("mixer_activation").get<std::string>());
    cfg.fixed_sum_mixer = h.at("fixed_sum_mixer").get<bool>();
    cfg.separate_mixers = h.at("separate_mixers").get<bool>();
    out.alpha = h.at("alpha").get<double>();
    out.divergence = parse_divergence(h.at("divergence").get<std::string>());
    out.divergence.kl_plain_generator = h.at("kl_plain_generator").get<bool>();
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ":1: bad header: " + e.what());
  }
  if (h.at("n_states").get<int>() != env.n_states ||
      h.at("obs_sizes").get<std::vector<int>>() != env.obs_sizes ||
      h.at("actions_per_agent").get<std::vector<int>>() != env.actions_per_agent) {
    throw std::runtime_error(path + ":1: parameter shapes do not match the environment");
  }
  cfg.alpha = out.alpha;
  cfg.divergence = out.divergence;
  out.params = init_params(env, cfg);
  const auto blocks = out.params.all_blocks();
  const auto& declared = h.at("blocks");
  if (declared.size() != blocks.size()) {
    throw std::runtime_error(path + ":1: expected " + std::to_string(blocks.size()) +
                             " parameter blocks, header lists " + std::to_string(declared.size()));
  }
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const int line_no = static_cast<int>(b) + 2;
    if (declared[b].at("name").get<std::string>() != blocks[b].name ||
        declared[b].at("size").get<Eigen::Index>() != blocks[b].values->size()) {
      throw std::runtime_error(path + ":1: block " + blocks[b].name + " has the wrong shape");
    }
    if (!std::getline(in, line)) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": truncated parameter file");
    }
    LineReader r(line, path, line_no);
    if (r.next_token("block") != blocks[b].name) r.fail("block", "expected " + blocks[b].name);
    for (Eigen::Index i = 0; i < blocks[b].values->size(); ++i) {
      (*blocks[b].values)(i) = r.next_real(blocks[b].name);
    }
    r.expect_end();
  }
  return out;
}

}  // namespace comadice
