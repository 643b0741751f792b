#include "comadice/nets.hpp"

#include <cmath>
#include <stdexcept>

namespace comadice {

Backend parse_backend(std::string_view token) {
  if (token == "tabular") return Backend::Tabular;
  if (token == "mlp") return Backend::Mlp;
  throw std::invalid_argument("unknown backend '" + std::string(token) + "' (tabular | mlp)");
}

std::string backend_token(Backend b) { return b == Backend::Tabular ? "tabular" : "mlp"; }

Activation parse_activation(std::string_view token) {
  if (token == "elu") return Activation::Elu;
  if (token == "relu") return Activation::Relu;
  throw std::invalid_argument("unknown activation '" + std::string(token) + "' (elu | relu)");
}

std::string activation_token(Activation a) { return a == Activation::Elu ? "elu" : "relu"; }

namespace {

inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
inline double elu_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

inline double activate(Activation a, double x) {
  return a == Activation::Elu ? elu(x) : std::max(0.0, x);
}
inline double activate_grad(Activation a, double x) {
  if (a == Activation::Elu) return elu_grad(x);
  return x > 0.0 ? 1.0 : 0.0;
}

inline double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

IndexNet::IndexNet(Backend backend, int n_inputs, int n_out, int hidden)
    : backend_(backend), n_inputs_(n_inputs), n_out_(n_out), hidden_(hidden) {
  if (n_inputs <= 0 || n_out <= 0) throw std::invalid_argument("IndexNet: empty shape");
  if (backend == Backend::Tabular) {
    hidden_ = 0;
    params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_inputs) * n_out);
  } else {
    if (hidden <= 0) throw std::invalid_argument("IndexNet: MLP hidden width must be positive");
    params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(hidden) * n_inputs + hidden +
                                    static_cast<Eigen::Index>(n_out) * hidden + n_out);
  }
}

void IndexNet::init_uniform(Rng& rng) {
  if (backend_ == Backend::Tabular) return;
  const Eigen::Index l1 = static_cast<Eigen::Index>(hidden_) * n_inputs_ + hidden_;
  const double bound1 = 1.0 / std::sqrt(static_cast<double>(n_inputs_));
  const double bound2 = 1.0 / std::sqrt(static_cast<double>(hidden_));
  for (Eigen::Index i = 0; i < params_.size(); ++i) {
    const double bound = i < l1 ? bound1 : bound2;
    params_(i) = (2.0 * rng.uniform() - 1.0) * bound;
  }
}

Eigen::VectorXd IndexNet::forward(int input) const {
  if (input < 0 || input >= n_inputs_) throw std::out_of_range("IndexNet: input out of range");
  if (backend_ == Backend::Tabular) {
    return params_.segment(static_cast<Eigen::Index>(input) * n_out_, n_out_);
  }
  const Eigen::Index h = hidden_;
  Eigen::Map<const Eigen::MatrixXd> w1(params_.data(), h, n_inputs_);
  Eigen::Map<const Eigen::VectorXd> b1(params_.data() + h * n_inputs_, h);
  Eigen::Map<const Eigen::MatrixXd> w2(params_.data() + h * n_inputs_ + h, n_out_, h);
  Eigen::Map<const Eigen::VectorXd> b2(params_.data() + h * n_inputs_ + h + n_out_ * h, n_out_);
  Eigen::VectorXd act = (w1.col(input) + b1).unaryExpr([](double x) { return elu(x); });
  return w2 * act + b2;
}

void IndexNet::backward(int input, const Eigen::Ref<const Eigen::VectorXd>& d_out,
                        Eigen::VectorXd& grad) const {
  if (backend_ == Backend::Tabular) {
    grad.segment(static_cast<Eigen::Index>(input) * n_out_, n_out_) += d_out;
    return;
  }
  const Eigen::Index h = hidden_;
  Eigen::Map<const Eigen::MatrixXd> w1(params_.data(), h, n_inputs_);
  Eigen::Map<const Eigen::VectorXd> b1(params_.data() + h * n_inputs_, h);
  Eigen::Map<const Eigen::MatrixXd> w2(params_.data() + h * n_inputs_ + h, n_out_, h);
  Eigen::Map<Eigen::MatrixXd> g_w1(grad.data(), h, n_inputs_);
  Eigen::Map<Eigen::VectorXd> g_b1(grad.data() + h * n_inputs_, h);
  Eigen::Map<Eigen::MatrixXd> g_w2(grad.data() + h * n_inputs_ + h, n_out_, h);
  Eigen::Map<Eigen::VectorXd> g_b2(grad.data() + h * n_inputs_ + h + n_out_ * h, n_out_);
  const Eigen::VectorXd pre = w1.col(input) + b1;
  const Eigen::VectorXd act = pre.unaryExpr([](double x) { return elu(x); });
  g_w2.noalias() += d_out * act.transpose();
  g_b2 += d_out;
  const Eigen::VectorXd d_pre =
      (w2.transpose() * d_out).cwiseProduct(pre.unaryExpr([](double x) { return elu_grad(x); }));
  g_w1.col(input) += d_pre;
  g_b1 += d_pre;
}

double& IndexNet::entry(int input, int k) {
  if (backend_ != Backend::Tabular) throw std::logic_error("IndexNet::entry: not tabular");
  return params_(static_cast<Eigen::Index>(input) * n_out_ + k);
}

double IndexNet::entry(int input, int k) const {
  if (backend_ != Backend::Tabular) throw std::logic_error("IndexNet::entry: not tabular");
  return params_(static_cast<Eigen::Index>(input) * n_out_ + k);
}

void IndexNet::fill_output(const Eigen::VectorXd& value) {
  if (backend_ == Backend::Tabular) {
    for (int i = 0; i < n_inputs_; ++i) {
      params_.segment(static_cast<Eigen::Index>(i) * n_out_, n_out_) = value;
    }
  } else {
    const Eigen::Index h = hidden_;
    params_.segment(h * n_inputs_ + h, n_out_ * h).setZero();
    params_.tail(n_out_) = value;
  }
}

AgentValueParams AgentValueParams::make(Backend backend, std::span<const int> obs_sizes,
                                        int hidden, Rng* rng) {
  AgentValueParams p;
  for (int n_obs : obs_sizes) {
    p.agents.emplace_back(backend, n_obs, 1, hidden);
    if (rng) p.agents.back().init_uniform(*rng);
  }
  return p;
}

double AgentValueParams::value(int agent, int obs) const {
  return agents.at(static_cast<std::size_t>(agent)).forward(obs)(0);
}

Eigen::VectorXd AgentValueParams::values(std::span<const int> obs) const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(obs.size()));
  for (std::size_t i = 0; i < obs.size(); ++i) v(i) = value(static_cast<int>(i), obs[i]);
  return v;
}

std::vector<ParamBlock> AgentValueParams::blocks(std::string_view prefix) {
  std::vector<ParamBlock> out;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    out.push_back({std::string(prefix) + "[" + std::to_string(i) + "]", &agents[i].params()});
  }
  return out;
}

AgentQParams AgentQParams::make(Backend backend, std::span<const int> obs_sizes,
                                std::span<const int> actions_per_agent, int hidden, Rng* rng) {
  if (obs_sizes.size() != actions_per_agent.size()) {
    throw std::invalid_argument("AgentQParams: one action count per agent required");
  }
  AgentQParams p;
  for (std::size_t i = 0; i < obs_sizes.size(); ++i) {
    p.agents.emplace_back(backend, obs_sizes[i], actions_per_agent[i], hidden);
    if (rng) p.agents.back().init_uniform(*rng);
  }
  return p;
}

double AgentQParams::q(int agent, int obs, int action) const {
  return agents.at(static_cast<std::size_t>(agent)).forward(obs)(action);
}

Eigen::VectorXd AgentQParams::values(std::span<const int> obs, std::span<const int> actions) const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(obs.size()));
  for (std::size_t i = 0; i < obs.size(); ++i) v(i) = q(static_cast<int>(i), obs[i], actions[i]);
  return v;
}

std::vector<ParamBlock> AgentQParams::blocks(std::string_view prefix) {
  std::vector<ParamBlock> out;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    out.push_back({std::string(prefix) + "[" + std::to_string(i) + "]", &agents[i].params()});
  }
  return out;
}

MixerParams MixerParams::make(int depth, int n_agents, int n_states, Backend backend, int hidden,
                              Activation act, Rng& rng) {
  if (depth != 1 && depth != 2) throw std::invalid_argument("mixer depth must be 1 or 2");
  if (depth == 2 && hidden <= 0) throw std::invalid_argument("depth-2 mixer needs hidden_mixer > 0");
  MixerParams m;
  m.depth = depth;
  m.n_agents = n_agents;
  m.activation = act;
  const int hyper_hidden = backend == Backend::Mlp ? hidden : 0;
  auto head = [&](int n_out) {
    IndexNet net(backend, n_states, n_out, hyper_hidden);
    net.init_uniform(rng);
    return net;
  };
  auto positive_start = [&](IndexNet& net, double scale) {
    Eigen::VectorXd v(net.n_out());
    for (Eigen::Index k = 0; k < v.size(); ++k) {
      v(k) = depth == 1 ? scale : scale * (0.5 + rng.uniform());
    }
    if (net.backend() == Backend::Tabular) {
      net.fill_output(v);
    } else {
      net.params().tail(net.n_out()) += v;
    }
  };
  if (depth == 1) {
    m.w1 = head(n_agents);
    m.b1 = head(1);
    positive_start(m.w1, 1.0);
  } else {
    m.embed = hidden;
    m.w1 = head(n_agents * hidden);
    m.b1 = head(hidden);
    m.w2 = head(hidden);
    m.b2 = head(1);
    positive_start(m.w1, 1.0);
    positive_start(m.w2, 1.0 / hidden);
  }
  return m;
}

MixerParams MixerParams::sum(int n_agents, int n_states) {
  MixerParams m;
  m.depth = 1;
  m.n_agents = n_agents;
  m.w1 = IndexNet(Backend::Tabular, n_states, n_agents);
  m.b1 = IndexNet(Backend::Tabular, n_states, 1);
  m.w1.fill_output(Eigen::VectorXd::Ones(n_agents));
  return m;
}

Eigen::VectorXd MixerParams::weights(int s) const { return w1.forward(s).cwiseAbs(); }

std::vector<ParamBlock> MixerParams::blocks(std::string_view prefix) {
  std::string p(prefix);
  if (depth == 1) return {{p + ".w", &w1.params()}, {p + ".b", &b1.params()}};
  return {{p + ".w1", &w1.params()},
          {p + ".b1", &b1.params()},
          {p + ".w2", &w2.params()},
          {p + ".b2", &b2.params()}};
}

double mix(const MixerParams& theta, int s, const Eigen::Ref<const Eigen::VectorXd>& locals) {
  MixTrace trace;
  return mix(theta, s, locals, trace);
}

double mix(const MixerParams& theta, int s, const Eigen::Ref<const Eigen::VectorXd>& locals,
           MixTrace& trace) {
  if (locals.size() != theta.n_agents) {
    throw std::invalid_argument("mix: expected " + std::to_string(theta.n_agents) +
                                " local values, got " + std::to_string(locals.size()));
  }
  trace.raw_w1 = theta.w1.forward(s);
  trace.b1 = theta.b1.forward(s);
  if (theta.depth == 1) return trace.raw_w1.cwiseAbs().dot(locals) + trace.b1(0);

  Eigen::Map<const Eigen::MatrixXd> w1(trace.raw_w1.data(), theta.n_agents, theta.embed);
  trace.pre = w1.cwiseAbs().transpose() * locals + trace.b1;
  trace.h = trace.pre.unaryExpr([&](double x) { return activate(theta.activation, x); });
  trace.raw_w2 = theta.w2.forward(s);
  return trace.raw_w2.cwiseAbs().dot(trace.h) + theta.b2.forward(s)(0);
}

void mix_backward(const MixerParams& theta, int s, const Eigen::Ref<const Eigen::VectorXd>& locals,
                  const MixTrace& trace, double d_out, Eigen::VectorXd* d_locals,
                  MixerParams* d_theta) {
  const auto sgn = [](double x) { return sign(x); };
  if (theta.depth == 1) {
    if (d_locals) *d_locals += d_out * trace.raw_w1.cwiseAbs();
    if (d_theta) {
      Eigen::VectorXd d_raw = d_out * locals.cwiseProduct(trace.raw_w1.unaryExpr(sgn));
      theta.w1.backward(s, d_raw, d_theta->w1.params());
      theta.b1.backward(s, Eigen::VectorXd::Constant(1, d_out), d_theta->b1.params());
    }
    return;
  }
  const Eigen::Index n = theta.n_agents, e = theta.embed;
  Eigen::Map<const Eigen::MatrixXd> raw_w1(trace.raw_w1.data(), n, e);
  const Eigen::VectorXd d_pre =
      (d_out * trace.raw_w2.cwiseAbs())
          .cwiseProduct(trace.pre.unaryExpr([&](double x) { return activate_grad(theta.activation, x); }));
  if (d_locals) *d_locals += raw_w1.cwiseAbs() * d_pre;
  if (d_theta) {
    Eigen::VectorXd d_raw2 = d_out * trace.h.cwiseProduct(trace.raw_w2.unaryExpr(sgn));
    theta.w2.backward(s, d_raw2, d_theta->w2.params());
    theta.b2.backward(s, Eigen::VectorXd::Constant(1, d_out), d_theta->b2.params());
    theta.b1.backward(s, d_pre, d_theta->b1.params());
    Eigen::MatrixXd d_w1 = (locals * d_pre.transpose()).cwiseProduct(raw_w1.unaryExpr(sgn));
    theta.w1.backward(s, Eigen::Map<const Eigen::VectorXd>(d_w1.data(), n * e),
                      d_theta->w1.params());
  }
}

double advantage_tot(const AgentQParams& q, const AgentValueParams& nu, const MixerParams& theta,
                     int s, std::span<const int> obs, std::span<const int> actions) {
  return mix(theta, s, q.values(obs, actions) - nu.values(obs));
}

namespace {
template <typename T>
T zero_nets(T p) {
  for (auto& net : p.agents) net.params().setZero();
  return p;
}
}  // namespace

AgentValueParams zeros_like(const AgentValueParams& p) { return zero_nets(p); }
AgentQParams zeros_like(const AgentQParams& p) { return zero_nets(p); }

MixerParams zeros_like(const MixerParams& p) {
  MixerParams z = p;
  for (IndexNet* net : {&z.w1, &z.b1, &z.w2, &z.b2}) net->params().setZero();
  return z;
}

}  // namespace comadice
