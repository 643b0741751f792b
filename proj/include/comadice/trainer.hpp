#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "comadice/dataset.hpp"
#include "comadice/fdiv.hpp"
#include "comadice/mamdp.hpp"
#include "comadice/nets.hpp"
#include "comadice/policy.hpp"

namespace comadice {

/// The trainable triple: local values, local Q-functions, mixer. By default
/// one mixer serves both nu_tot and the advantage; with `separate_mixers` the
/// advantage goes through `theta_adv` instead.
struct DiceParams {
  AgentValueParams nu;
  AgentQParams q;
  MixerParams theta;
  MixerParams theta_adv;
  bool separate_mixers = false;

  const MixerParams& adv_mixer() const { return separate_mixers ? theta_adv : theta; }
  MixerParams& adv_mixer() { return separate_mixers ? theta_adv : theta; }

  std::vector<ParamBlock> nu_blocks() { return nu.blocks("psi_nu"); }
  std::vector<ParamBlock> q_blocks() { return q.blocks("psi_q"); }
  /// Both mixers when they are separate.
  std::vector<ParamBlock> theta_blocks();
  std::vector<ParamBlock> all_blocks();

  /// M_theta[nu(Z(s))]
  double nu_tot(int s, std::span<const int> obs) const;
  /// M_theta[q(Z(s), a) - nu(Z(s))]
  double advantage(int s, std::span<const int> obs, std::span<const int> actions) const;
};

DiceParams zeros_like(const DiceParams& p);

/// Concatenation of the blocks, in order.
Eigen::VectorXd flatten(const std::vector<ParamBlock>& blocks);
void assign(const std::vector<ParamBlock>& blocks, const Eigen::VectorXd& flat);

enum class OptimizerKind { Sgd, Adam };

/// How loss_nu differentiates through the next-state value.
///   Semi: nu_tot(s') enters only through the Q-fit, so the gradient ignores it.
///   Bootstrap: adds gamma * w * grad nu_tot(s') per non-terminal sample, the
///     exact gradient of the dual once the Q-fit is exact.
enum class NuGradient { Bootstrap, Semi };

OptimizerKind parse_optimizer(std::string_view token);
std::string optimizer_token(OptimizerKind k);
NuGradient parse_nu_gradient(std::string_view token);
std::string nu_gradient_token(NuGradient g);

struct TrainConfig {
  double alpha = 10.0;
  double gamma = 0.99;
  double lr_q = 1e-4;
  double lr_nu = 1e-4;
  double lr_theta = 1e-4;
  int batch_size = 128;  // 0 = the full dataset every step
  int steps = 1000;
  std::uint64_t seed = 0;
  FDivergence divergence = FDivergence::soft_chi2();
  int mixer_depth = 1;
  bool fixed_sum_mixer = false;  // mixer pinned to W = 1, b = 0 and never updated
  bool separate_mixers = false;  // distinct mixers for nu_tot and the advantage
  Backend backend = Backend::Tabular;
  int hidden = 32;        // agent MLP width
  int hidden_mixer = 16;  // hypernetwork width and depth-2 embedding
  Activation mixer_activation = Activation::Elu;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  NuGradient nu_gradient = NuGradient::Bootstrap;
  int eval_every = 0;  // 0 = log only the final step

  /// Throws std::invalid_argument on non-positive rates, alpha, etc.
  void validate() const;
};

struct TrainRecord {
  int step = 0;
  double loss_nu = 0.0;
  double loss_q = 0.0;
  double w_mean = 0.0;
  double w_max = 0.0;
  double w_clamped_frac = 0.0;
  double eval_return_mean = std::numeric_limits<double>::quiet_NaN();
  double eval_return_std = std::numeric_limits<double>::quiet_NaN();
};

struct TrainLog {
  std::vector<TrainRecord> records;
};

inline constexpr std::string_view kTrainLogHeader =
    "step,loss_nu,loss_q,w_mean,w_max,w_clamped_frac,eval_return_mean,eval_return_std";
std::string train_log_csv(const TrainLog& log);

/// Thrown when loss_nu leaves the finite range or exceeds 1e6; carries the
/// log up to and including the offending step.
struct TrainingDiverged : std::runtime_error {
  TrainingDiverged(const std::string& what, TrainLog log_)
      : std::runtime_error(what), log(std::move(log_)) {}
  TrainLog log;
};

/// Transitions with multiplicities; every loss is a weighted mean over them.
struct Batch {
  std::vector<const Transition*> items;
  std::vector<double> weights;  // empty = all 1

  Batch() = default;
  Batch(std::vector<const Transition*> t) : items(std::move(t)) {}

  double weight(std::size_t k) const { return weights.empty() ? 1.0 : weights[k]; }
  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
};

/// Every transition once, identical records merged into one weighted item.
Batch full_batch(const OfflineDataset& ds);
/// Trajectory starts of the whole dataset (merged like full_batch); used when
/// a batch holds no start.
Batch initial_pool(const OfflineDataset& ds);

/// Mean squared residual A(s,a) - (r + gamma nu_tot(s') - nu_tot(s)).
/// Terminal transitions do not bootstrap.
double loss_q(const DiceParams& p, const Batch& batch, const TrainConfig& cfg);
/// Gradient of loss_q with respect to psi_q; other blocks of the result are 0.
DiceParams grad_q(const DiceParams& p, const Batch& batch, const TrainConfig& cfg);

/// (1 - gamma) mean nu_tot(s0) + mean alpha f*(A / alpha). The s0 average
/// runs over the batch's trajectory starts, or over `pool` when there are none.
///
/// With `anchor` set, each non-terminal sample's advantage gains
/// gamma (nu_tot(s') - nu_tot_anchor(s')). That leaves the value unchanged at
/// p == anchor; its gradient there is the bootstrap gradient.
double loss_nu(const DiceParams& p, const Batch& batch, const Batch& pool, const TrainConfig& cfg,
               const DiceParams* anchor = nullptr);

/// Analytic gradient of loss_nu with respect to (theta, psi_nu), following
/// cfg.nu_gradient. The psi_q block of the result is 0.
DiceParams grad_nu_analytic(const DiceParams& p, const Batch& batch, const Batch& pool,
                            const TrainConfig& cfg);

/// Parameters before any update, seeded from cfg.seed.
DiceParams init_params(const MultiAgentMDP& env, const TrainConfig& cfg);

/// w*(A(s, a)) with the configured divergence and alpha.
double ratio_at(const DiceParams& p, const TrainConfig& cfg, int s, std::span<const int> obs,
                std::span<const int> actions);

struct TrainHooks {
  /// Called after each parameter-group update with "psi_q", "theta" or "psi_nu".
  std::function<void(std::string_view group, const DiceParams&)> on_update;
  /// Policy evaluation for the log; fields stay NaN when unset.
  std::function<EvalResult(const DiceParams&)> evaluate;
};

struct TrainResult {
  DiceParams params;
  TrainLog log;
};

/// Each step draws a batch (with replacement, seeded) and updates psi_q on
/// loss_q, then theta on loss_nu, then psi_nu on loss_nu, each gradient taken
/// at the parameters left by the previous update.
TrainResult train_ratio(const OfflineDataset& ds, const MultiAgentMDP& env, const TrainConfig& cfg,
                        const TrainHooks& hooks = {});

/// `COMADICE-PARAMS v1 <json shape header>` then one `<block> <values...>` line
/// per parameter block.
void save_params(const DiceParams& p, const TrainConfig& cfg, const std::string& path);

struct LoadedParams {
  DiceParams params;
  double alpha = 0.0;
  FDivergence divergence;
};

/// Throws std::runtime_error when the file's shapes disagree with `env`.
LoadedParams load_params(const std::string& path, const MultiAgentMDP& env);

}  // namespace comadice
