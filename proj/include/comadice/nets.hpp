#pragma once

#include <Eigen/Dense>

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "comadice/rng.hpp"

namespace comadice {

enum class Backend { Tabular, Mlp };
enum class Activation { Elu, Relu };

Backend parse_backend(std::string_view token);
std::string backend_token(Backend b);
Activation parse_activation(std::string_view token);
std::string activation_token(Activation a);

/// A named view of one contiguous parameter vector, used by optimizers,
/// finite-difference checks and serialization.
struct ParamBlock {
  std::string name;
  Eigen::VectorXd* values;
};

/// Maps a discrete input index (an observation, or a state for hypernetwork
/// heads) to `n_out` reals.
///
/// Tabular: one column of `n_out` entries per input.
/// Mlp: one ELU hidden layer of width `hidden` over the one-hot input.
class IndexNet {
 public:
  IndexNet() = default;
  IndexNet(Backend backend, int n_inputs, int n_out, int hidden = 0);

  Backend backend() const { return backend_; }
  int n_inputs() const { return n_inputs_; }
  int n_out() const { return n_out_; }
  int hidden() const { return hidden_; }

  /// Uniform +-1/sqrt(fan_in) for every MLP weight and bias; tabular stays 0.
  void init_uniform(Rng& rng);

  Eigen::VectorXd forward(int input) const;
  /// Adds d(out . d_out)/d(params) into `grad` (same layout as params()).
  void backward(int input, const Eigen::Ref<const Eigen::VectorXd>& d_out,
                Eigen::VectorXd& grad) const;

  /// Tabular entry (input, k). Only valid for the tabular backend.
  double& entry(int input, int k);
  double entry(int input, int k) const;
  /// Sets the output bias (MLP) or every column (tabular) to `value`.
  void fill_output(const Eigen::VectorXd& value);

  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }

 private:
  Backend backend_ = Backend::Tabular;
  int n_inputs_ = 0;
  int n_out_ = 0;
  int hidden_ = 0;
  Eigen::VectorXd params_;
};

/// Local value functions nu_i(o_i), one network per agent.
struct AgentValueParams {
  std::vector<IndexNet> agents;

  static AgentValueParams make(Backend backend, std::span<const int> obs_sizes, int hidden,
                               Rng* rng = nullptr);
  double value(int agent, int obs) const;
  Eigen::VectorXd values(std::span<const int> obs) const;
  std::vector<ParamBlock> blocks(std::string_view prefix = "psi_nu");
};

/// Local Q-functions q_i(o_i, a_i) with one output head per action.
struct AgentQParams {
  std::vector<IndexNet> agents;

  static AgentQParams make(Backend backend, std::span<const int> obs_sizes,
                           std::span<const int> actions_per_agent, int hidden,
                           Rng* rng = nullptr);
  double q(int agent, int obs, int action) const;
  Eigen::VectorXd values(std::span<const int> obs, std::span<const int> actions) const;
  std::vector<ParamBlock> blocks(std::string_view prefix = "psi_q");
};

/// State-conditioned mixing network whose weights come from hypernetwork
/// heads over the one-hot global state. Realized weights are |head output|,
/// hence non-negative; the depth-2 hidden activation is convex and
/// non-decreasing.
///
/// depth 1: out = |w(s)| . x + b(s)
/// depth 2: out = |w2(s)| . act(|W1(s)|^T x + b1(s)) + b2(s), W1 is n x embed
struct MixerParams {
  int depth = 1;
  int n_agents = 0;
  int embed = 0;
  Activation activation = Activation::Elu;
  IndexNet w1, b1, w2, b2;

  /// Tabular heads start at weight 1 (depth 1) or U[0.5, 1.5] (depth 2) and
  /// bias 0; MLP heads use uniform init.
  static MixerParams make(int depth, int n_agents, int n_states, Backend backend,
                          int hidden, Activation act, Rng& rng);
  /// Depth-1 mixer with W = 1 and b = 0 at every state.
  static MixerParams sum(int n_agents, int n_states);

  Eigen::VectorXd weights(int s) const;  // depth-1 realized weights
  std::vector<ParamBlock> blocks(std::string_view prefix = "theta");
};

/// Intermediate values kept by a forward pass for backpropagation.
struct MixTrace {
  Eigen::VectorXd raw_w1, b1, pre, h, raw_w2;
};

double mix(const MixerParams& theta, int s, const Eigen::Ref<const Eigen::VectorXd>& locals);
double mix(const MixerParams& theta, int s, const Eigen::Ref<const Eigen::VectorXd>& locals,
           MixTrace& trace);
/// Backpropagates `d_out` through one mixer evaluation. Either output pointer
/// may be null.
void mix_backward(const MixerParams& theta, int s, const Eigen::Ref<const Eigen::VectorXd>& locals,
                  const MixTrace& trace, double d_out, Eigen::VectorXd* d_locals,
                  MixerParams* d_theta);

/// Global advantage M_s[q(o, a) - nu(o)].
double advantage_tot(const AgentQParams& q, const AgentValueParams& nu, const MixerParams& theta,
                     int s, std::span<const int> obs, std::span<const int> actions);

/// Zero-valued copy with the same shapes.
AgentValueParams zeros_like(const AgentValueParams& p);
AgentQParams zeros_like(const AgentQParams& p);
MixerParams zeros_like(const MixerParams& p);

}  // namespace comadice
