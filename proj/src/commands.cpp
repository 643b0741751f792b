#include "comadice/commands.hpp"

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "comadice/dataset.hpp"
#include "comadice/extract.hpp"
#include "comadice/oracle.hpp"
#include "comadice/policy.hpp"
#include "comadice/textio.hpp"
#include "comadice/trainer.hpp"

namespace fs = std::filesystem;

namespace comadice {

namespace {

constexpr long kOraclePairLimit = 1000000;
constexpr double kGapThreshold = 1e-5;
constexpr double kFlowThreshold = 1e-8;

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

/// Runs `f`, turning configuration errors into usage errors.
template <typename F>
auto resolve(F&& f) {
  try {
    return f();
  } catch (const UsageError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

std::string path_or(const CommandContext& ctx, const std::string& key, const std::string& file) {
  const std::string& v = ctx.config.get(key);
  return v.empty() ? (fs::path(ctx.out_dir) / file).string() : v;
}

void prepare_out_dir(const fs::path& dir, const RunConfig& rc) {
  fs::create_directories(dir);
  write_text_file((dir / "config.resolved").string(), rc.dump());
}

MultiAgentMDP require_env(const RunConfig& rc) {
  if (rc.get("env").empty()) throw UsageError("missing env spec (--env or 'env = ...')");
  return resolve([&] { return make_env(rc.get("env")); });
}

/// The environment named by the config, or else by the dataset.
MultiAgentMDP env_for(const RunConfig& rc, const OfflineDataset& ds) {
  return resolve([&] { return make_env(rc.get("env").empty() ? ds.meta.env_spec : rc.get("env")); });
}

bool dry(const CommandContext& ctx, const std::string& plan) {
  if (!ctx.dry_run) return false;
  *ctx.out << "plan: " << plan << "\n" << ctx.config.dump();
  return true;
}

struct OracleReport {
  double primal = 0.0, dual = 0.0, gap = 0.0, flow = 0.0;
  double tv_learned = -1.0;  // < 0 when no parameters were given
};

OracleReport oracle_report(const MultiAgentMDP& env, const OfflineDataset& ds, double alpha,
                           const FDivergence& div, const std::string& params_path) {
  if (static_cast<long>(env.n_states) * env.n_joint() > kOraclePairLimit) {
    throw std::runtime_error("oracle-check: more than 1e6 state-action pairs");
  }
  // Behavior occupancy: exact occupancy of the behavior-cloned policy.
  const std::vector<double> ones(ds.transitions.size(), 1.0);
  LocalPolicySet bc;
  for (int i = 0; i < env.n_agents; ++i) {
    bc.tables.push_back(
        tabular_wbc_closed_form(ds, ones, i, env.obs_sizes[i], env.actions_per_agent[i]));
  }
  const OccupancyMeasure rho_mu = occupancy_measure(env, joint_policy(env, bc));
  const PrimalSolution primal = solve_regularized_primal(env, rho_mu, alpha, div);
  const DualSolution dual = solve_dual_tabular(env, rho_mu, alpha, div);
  OracleReport r;
  r.primal = primal.objective;
  r.dual = dual.value;
  r.gap = std::abs(primal.objective - dual.value);
  r.flow = check_flow(primal.rho, env);
  if (!params_path.empty() && fs::exists(params_path)) {
    const LoadedParams lp = load_params(params_path, env);
    Eigen::MatrixXd recon = Eigen::MatrixXd::Zero(env.n_states, env.n_joint());
    for (int s = 0; s < env.n_states; ++s) {
      const auto obs = observe(env, s);
      for (int a = 0; a < env.n_joint(); ++a) {
        if (rho_mu.rho(s, a) < kSupportFloor) continue;
        const auto acts = joint_decode(a, env.actions_per_agent);
        recon(s, a) = w_star(lp.divergence, lp.params.advantage(s, obs, acts), lp.alpha) *
                      rho_mu.rho(s, a);
      }
    }
    if (recon.sum() > 0.0) r.tv_learned = total_variation(recon / recon.sum(), primal.rho);
  }
  return r;
}

void print_oracle(std::ostream& out, const OracleReport& r) {
  out << "primal_value " << num(r.primal) << "\n"
      << "dual_value " << num(r.dual) << "\n"
      << "duality_gap " << num(r.gap) << "\n"
      << "flow_residual " << num(r.flow) << "\n"
      << "tv_learned_vs_optimum " << (r.tv_learned < 0.0 ? std::string("n/a") : num(r.tv_learned))
      << "\n";
}

bool oracle_ok(const OracleReport& r) { return r.gap <= kGapThreshold && r.flow <= kFlowThreshold; }

struct RunOutcome {
  DiceParams params;
  TrainConfig cfg;
  LocalPolicySet policy;
  EvalResult eval;
};

/// Train, extract and evaluate with one resolved config.
RunOutcome train_extract_eval(const RunConfig& rc, const OfflineDataset& ds,
                              const MultiAgentMDP& env, const std::string& log_path) {
  RunOutcome o;
  o.cfg = resolve([&] { return train_config(rc, env.discount); });
  const PolicyConfig pcfg = resolve([&] { return policy_config(rc); });
  const int episodes = resolve([&] { return rc.get_int("eval_episodes"); });
  const int horizon = resolve([&] { return rc.get_int("eval_horizon"); });
  const std::uint64_t seed = o.cfg.seed;
  TrainHooks hooks;
  if (o.cfg.eval_every > 0) {
    hooks.evaluate = [&](const DiceParams& p) {
      const auto w = dataset_ratios(ds, p, o.cfg.alpha, o.cfg.divergence);
      return evaluate(env, train_policies(ds, w, env, pcfg), episodes, horizon, seed);
    };
  }
  TrainResult tr;
  try {
    tr = train_ratio(ds, env, o.cfg, hooks);
  } catch (const TrainingDiverged& e) {
    if (!log_path.empty()) write_text_file(log_path, train_log_csv(e.log));
    throw;
  }
  if (!log_path.empty()) write_text_file(log_path, train_log_csv(tr.log));
  o.params = std::move(tr.params);
  const auto w = dataset_ratios(ds, o.params, o.cfg.alpha, o.cfg.divergence);
  o.policy = train_policies(ds, w, env, pcfg);
  o.eval = evaluate(env, o.policy, episodes, horizon, seed);
  return o;
}

OfflineDataset ensure_dataset(const CommandContext& ctx, const RunConfig& rc,
                              const std::string& path) {
  if (fs::exists(path)) return load_dataset(path);
  const MultiAgentMDP env = require_env(rc);
  const LocalPolicySet beh = resolve([&] { return make_behavior(env, rc.get("behavior")); });
  const int n = resolve([&] { return rc.get_int("trajectories"); });
  const int h = resolve([&] { return rc.get_int("horizon"); });
  const auto seed = resolve([&] { return rc.get_u64("seed"); });
  OfflineDataset ds = resolve([&] { return generate_dataset(env, beh, n, h, seed, rc.get("behavior")); });
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  save_dataset(ds, path);
  *ctx.out << "wrote " << ds.transitions.size() << " transitions (" << ds.meta.n_trajectories
           << " trajectories, behavior return " << num(ds.meta.return_mean) << " +- "
           << num(ds.meta.return_std) << ") to " << path << "\n";
  return ds;
}

}  // namespace

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

int cmd_gen_data(const CommandContext& ctx) {
  const std::string path = path_or(ctx, "data", "dataset.txt");
  if (dry(ctx, "gen-data -> " + path)) return kExitOk;
  require_env(ctx.config);
  prepare_out_dir(ctx.out_dir, ctx.config);
  if (fs::exists(path)) fs::remove(path);
  ensure_dataset(ctx, ctx.config, path);
  return kExitOk;
}

int cmd_train(const CommandContext& ctx) {
  const std::string data = ctx.config.get("data");
  if (data.empty()) throw UsageError("train: missing --data");
  const std::string params = path_or(ctx, "params", "params.txt");
  const std::string log = path_or(ctx, "log", "train_log.csv");
  if (dry(ctx, "train " + data + " -> " + params + ", " + log)) return kExitOk;
  prepare_out_dir(ctx.out_dir, ctx.config);
  const OfflineDataset ds = load_dataset(data);
  const MultiAgentMDP env = env_for(ctx.config, ds);
  const TrainConfig cfg = resolve([&] { return train_config(ctx.config, env.discount); });
  const PolicyConfig pcfg = resolve([&] { return policy_config(ctx.config); });
  const int episodes = resolve([&] { return ctx.config.get_int("eval_episodes"); });
  const int horizon = resolve([&] { return ctx.config.get_int("eval_horizon"); });
  TrainHooks hooks;
  if (cfg.eval_every > 0) {
    hooks.evaluate = [&](const DiceParams& p) {
      const auto w = dataset_ratios(ds, p, cfg.alpha, cfg.divergence);
      return evaluate(env, train_policies(ds, w, env, pcfg), episodes, horizon, cfg.seed);
    };
  }
  TrainResult tr;
  try {
    tr = train_ratio(ds, env, cfg, hooks);
  } catch (const TrainingDiverged& e) {
    write_text_file(log, train_log_csv(e.log));
    throw;
  }
  write_text_file(log, train_log_csv(tr.log));
  save_params(tr.params, cfg, params);
  *ctx.out << "trained " << cfg.steps << " steps";
  if (!tr.log.records.empty()) {
    const auto& r = tr.log.records.back();
    *ctx.out << ": loss_nu " << num(r.loss_nu) << ", loss_q " << num(r.loss_q) << ", mean w "
             << num(r.w_mean);
  }
  *ctx.out << "\nparams -> " << params << "\nlog -> " << log << "\n";
  return kExitOk;
}

int cmd_extract_policy(const CommandContext& ctx) {
  const std::string data = ctx.config.get("data");
  const std::string params = ctx.config.get("params");
  if (data.empty() || params.empty()) throw UsageError("extract-policy: needs --data and --params");
  const std::string out = path_or(ctx, "policy", "policy.txt");
  if (dry(ctx, "extract-policy " + data + " + " + params + " -> " + out)) return kExitOk;
  prepare_out_dir(ctx.out_dir, ctx.config);
  const OfflineDataset ds = load_dataset(data);
  const MultiAgentMDP env = env_for(ctx.config, ds);
  const LoadedParams lp = load_params(params, env);
  const PolicyConfig pcfg = resolve([&] { return policy_config(ctx.config); });
  const auto w = dataset_ratios(ds, lp.params, lp.alpha, lp.divergence);
  save_policy(train_policies(ds, w, env, pcfg), out);
  *ctx.out << "policy -> " << out << "\n";
  return kExitOk;
}

int cmd_eval(const CommandContext& ctx) {
  const std::string policy = ctx.config.get("policy");
  if (policy.empty()) throw UsageError("eval: missing --policy");
  if (dry(ctx, "eval " + policy)) return kExitOk;
  const MultiAgentMDP env = require_env(ctx.config);
  const int episodes = resolve([&] { return ctx.config.get_int("eval_episodes"); });
  const int horizon = resolve([&] { return ctx.config.get_int("eval_horizon"); });
  const auto seed = resolve([&] { return ctx.config.get_u64("seed"); });
  if (episodes <= 0) throw UsageError("eval: --episodes must be positive");
  prepare_out_dir(ctx.out_dir, ctx.config);
  const LocalPolicySet pol = load_policy(policy);
  pol.check_compatible(env);
  const EvalResult r = evaluate(env, pol, episodes, horizon, seed);
  *ctx.out << "return " << num(r.mean) << " +- " << num(r.std) << " (undiscounted "
           << num(r.undiscounted_mean) << " +- " << num(r.undiscounted_std) << ") over "
           << episodes << " episodes\n";
  return kExitOk;
}

int cmd_oracle_check(const CommandContext& ctx) {
  const std::string data = ctx.config.get("data");
  if (data.empty()) throw UsageError("oracle-check: missing --data");
  if (dry(ctx, "oracle-check " + data)) return kExitOk;
  const double alpha = resolve([&] { return ctx.config.get_double("alpha"); });
  FDivergence div = resolve([&] { return parse_divergence(ctx.config.get("divergence")); });
  div.kl_plain_generator = resolve([&] { return ctx.config.get_bool("kl_plain_generator"); });
  if (!(alpha > 0.0)) throw UsageError("oracle-check: alpha must be positive");
  prepare_out_dir(ctx.out_dir, ctx.config);
  const OfflineDataset ds = load_dataset(data);
  const MultiAgentMDP env = env_for(ctx.config, ds);
  const OracleReport r = oracle_report(env, ds, alpha, div, ctx.config.get("params"));
  print_oracle(*ctx.out, r);
  if (!oracle_ok(r)) {
    *ctx.err << "oracle-check: duality gap or flow residual above threshold\n";
    return kExitThreshold;
  }
  return kExitOk;
}

int cmd_ablate(const CommandContext& ctx) {
  const RunConfig& rc = ctx.config;
  const auto alphas = rc.get_list("alphas");
  const auto divs = rc.get_list("divergences");
  const auto depths = rc.get_list("depths");
  const auto seeds = rc.get_list("seeds");
  if (alphas.empty() || divs.empty() || depths.empty() || seeds.empty()) {
    throw UsageError("ablate: alphas, divergences, depths and seeds must be non-empty");
  }
  struct Cell {
    std::string alpha, div, depth, seed;
    fs::path dir;
  };
  std::vector<Cell> cells;
  for (const auto& a : alphas)
    for (const auto& d : divs)
      for (const auto& k : depths)
        for (const auto& s : seeds) {
          Cell c{a, d, k, s, {}};
          c.dir = fs::path(ctx.out_dir) / "cells" /
                  ("alpha_" + a + "-div_" + d + "-depth_" + k + "-seed_" + s);
          cells.push_back(std::move(c));
        }
  // Validate every cell's config before running anything.
  std::vector<RunConfig> cell_cfg;
  for (const auto& c : cells) {
    RunConfig r = rc;
    resolve([&] {
      r.set("alpha", c.alpha);
      r.set("divergence", c.div);
      r.set("mixer_depth", c.depth);
      r.set("seed", c.seed);
      train_config(r, 0.5);
      return 0;
    });
    cell_cfg.push_back(std::move(r));
  }
  const std::string data = path_or(ctx, "data", "dataset.txt");
  if (ctx.dry_run) {
    *ctx.out << "plan: ablate over " << cells.size() << " cells using " << data << "\n";
    for (const auto& c : cells) *ctx.out << "  " << c.dir.string() << "\n";
    *ctx.out << rc.dump();
    return kExitOk;
  }
  prepare_out_dir(ctx.out_dir, rc);
  const OfflineDataset ds = ensure_dataset(ctx, rc, data);
  const MultiAgentMDP env = env_for(rc, ds);

  std::vector<std::string> errors(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex print;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const Cell& c = cells[i];
      const fs::path result = c.dir / "result.csv";
      if (fs::exists(result)) continue;
      try {
        fs::create_directories(c.dir);
        write_text_file((c.dir / "config.resolved").string(), cell_cfg[i].dump());
        const RunOutcome o = train_extract_eval(cell_cfg[i], ds, env, (c.dir / "train_log.csv").string());
        std::ostringstream row;
        row << "alpha,div,depth,seed,return_mean,return_std\n"
            << csv_field(c.alpha) << ',' << csv_field(c.div) << ',' << csv_field(c.depth) << ','
            << csv_field(c.seed) << ',' << format_real(o.eval.mean) << ','
            << format_real(o.eval.std) << '\n';
        write_text_file((c.dir / "result.tmp").string(), row.str());
        fs::rename(c.dir / "result.tmp", result);
        std::lock_guard lock(print);
        *ctx.out << "cell " << c.dir.filename().string() << ": return " << num(o.eval.mean) << "\n";
      } catch (const std::exception& e) {
        errors[i] = e.what();
        std::lock_guard lock(print);
        *ctx.err << "cell " << c.dir.filename().string() << " failed: " << e.what() << "\n";
      }
    }
  };
  const int jobs = std::max(1, std::min<int>(ctx.jobs, static_cast<int>(cells.size())));
  std::vector<std::thread> pool;
  for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::string table = "alpha,div,depth,seed,return_mean,return_std\n";
  std::string failures = "alpha,div,depth,seed,error\n";
  bool failed = false;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const Cell& c = cells[i];
    if (!errors[i].empty()) {
      failed = true;
      failures += csv_field(c.alpha) + ',' + csv_field(c.div) + ',' + csv_field(c.depth) + ',' +
                  csv_field(c.seed) + ',' + csv_field(errors[i]) + '\n';
      continue;
    }
    std::ifstream in(c.dir / "result.csv");
    std::string header, row;
    std::getline(in, header);
    if (std::getline(in, row)) table += row + '\n';
  }
  write_text_file((fs::path(ctx.out_dir) / "ablate.csv").string(), table);
  write_text_file((fs::path(ctx.out_dir) / "failures.csv").string(), failures);
  *ctx.out << "results -> " << (fs::path(ctx.out_dir) / "ablate.csv").string() << "\n";
  return failed ? kExitRuntime : kExitOk;
}

int cmd_pipeline(const CommandContext& ctx) {
  const RunConfig& rc = ctx.config;
  if (rc.get("env").empty()) throw UsageError("pipeline: missing env spec");
  const std::string data = path_or(ctx, "data", "dataset.txt");
  const std::string params = path_or(ctx, "params", "params.txt");
  const std::string log = path_or(ctx, "log", "train_log.csv");
  const std::string policy = path_or(ctx, "policy", "policy.txt");
  const MultiAgentMDP env = require_env(rc);
  const bool tabular = static_cast<long>(env.n_states) * env.n_joint() <= kOraclePairLimit;
  if (dry(ctx, std::string(fs::exists(data) ? "" : "gen-data -> ") + data + " | train -> " +
                   params + " | extract-policy -> " + policy + " | eval" +
                   (tabular ? " | oracle-check" : ""))) {
    return kExitOk;
  }
  const TrainConfig cfg = resolve([&] { return train_config(rc, env.discount); });
  resolve([&] { return policy_config(rc); });
  prepare_out_dir(ctx.out_dir, rc);

  auto stage = [&](const char* name, auto&& f) {
    try {
      return f();
    } catch (const UsageError&) {
      throw;
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("stage ") + name + ": " + e.what());
    }
  };
  const OfflineDataset ds = stage("gen-data", [&] { return ensure_dataset(ctx, rc, data); });
  const RunOutcome o = stage("train", [&] {
    RunOutcome r = train_extract_eval(rc, ds, env, log);
    save_params(r.params, r.cfg, params);
    save_policy(r.policy, policy);
    return r;
  });
  *ctx.out << "eval return " << num(o.eval.mean) << " +- " << num(o.eval.std) << "\n";
  std::ostringstream summary;
  summary << "summary: eval_return_mean=" << num(o.eval.mean)
          << " eval_return_std=" << num(o.eval.std);
  int code = kExitOk;
  if (tabular) {
    const OracleReport r =
        stage("oracle-check", [&] { return oracle_report(env, ds, cfg.alpha, cfg.divergence, params); });
    print_oracle(*ctx.out, r);
    summary << " duality_gap=" << num(r.gap) << " flow_residual=" << num(r.flow);
    if (r.tv_learned >= 0.0) summary << " tv_learned=" << num(r.tv_learned);
    if (!oracle_ok(r)) code = kExitThreshold;
  }
  *ctx.out << summary.str() << "\n";
  write_text_file((fs::path(ctx.out_dir) / "summary.txt").string(), summary.str() + "\n");
  return code;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Offline cooperative multi-agent RL by stationary-distribution correction"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, seed, out_dir = ".";
  int jobs = 1;
  bool dry_run = false;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "key = value config file");
  app.add_option("--seed", seed, "random seed");
  app.add_option("--jobs", jobs, "parallel ablation cells")->check(CLI::PositiveNumber);
  app.add_option("--out-dir", out_dir, "output directory");
  app.add_flag("--dry-run", dry_run, "print the resolved plan and exit");
  app.add_option("--set", sets, "override any config key: key=value");

  // Subcommand options map one-to-one onto config keys.
  std::vector<std::pair<CLI::Option*, std::string>> bound;
  std::map<std::string, std::string> store;
  auto opt = [&](CLI::App* sub, const std::string& flag, const std::string& key,
                 const std::string& help) {
    bound.emplace_back(sub->add_option(flag, store[flag + "@" + sub->get_name()], help), key);
  };
  auto* gen = app.add_subcommand("gen-data", "roll out a behavior policy into a dataset");
  opt(gen, "--env", "env", "environment spec");
  opt(gen, "--policy,--behavior", "behavior", "uniform | expert | mix:<eps> | file:<path>");
  opt(gen, "--traj,--trajectories", "trajectories", "number of trajectories");
  opt(gen, "--horizon", "horizon", "maximum trajectory length");
  opt(gen, "--out", "data", "dataset path");

  auto* train = app.add_subcommand("train", "train the occupancy-ratio networks");
  opt(train, "--data", "data", "dataset path");
  opt(train, "--alpha", "alpha", "regularization weight");
  opt(train, "--div", "divergence", "kl | chi2 | soft-chi2");
  opt(train, "--steps", "steps", "training steps");
  opt(train, "--out", "params", "parameter file");
  opt(train, "--log", "log", "training log CSV");

  auto* extract = app.add_subcommand("extract-policy", "weighted behavioral cloning");
  opt(extract, "--data", "data", "dataset path");
  opt(extract, "--params", "params", "parameter file");
  opt(extract, "--out", "policy", "policy file");

  auto* eval = app.add_subcommand("eval", "Monte Carlo evaluation of a policy");
  opt(eval, "--env", "env", "environment spec");
  opt(eval, "--policy", "policy", "policy file");
  opt(eval, "--episodes", "eval_episodes", "episodes");
  opt(eval, "--horizon", "eval_horizon", "episode length cap");

  auto* oracle = app.add_subcommand("oracle-check", "certify primal/dual optima on the data");
  opt(oracle, "--env", "env", "environment spec (default: from the dataset)");
  opt(oracle, "--data", "data", "dataset path");
  opt(oracle, "--alpha", "alpha", "regularization weight");
  opt(oracle, "--div", "divergence", "kl | chi2 | soft-chi2");
  opt(oracle, "--params", "params", "trained parameters to compare (optional)");

  auto* ablate = app.add_subcommand("ablate", "factorial sweep over alpha, divergence, depth, seed");
  opt(ablate, "--env", "env", "environment spec");
  opt(ablate, "--data", "data", "dataset path");
  opt(ablate, "--alphas", "alphas", "comma-separated alphas");
  opt(ablate, "--divs", "divergences", "comma-separated divergences");
  opt(ablate, "--depths", "depths", "comma-separated mixer depths");
  opt(ablate, "--seeds", "seeds", "comma-separated seeds");

  auto* pipeline = app.add_subcommand("pipeline", "gen-data, train, extract, eval, oracle-check");
  opt(pipeline, "--env", "env", "environment spec");
  opt(pipeline, "--data", "data", "dataset path");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  CommandContext ctx;
  ctx.out_dir = out_dir;
  ctx.jobs = jobs;
  ctx.dry_run = dry_run;
  ctx.out = &out;
  ctx.err = &err;
  try {
    if (!config_path.empty()) ctx.config.load_file(config_path);
    for (const auto& [o, key] : bound) {
      if (o->count() > 0) ctx.config.set(key, o->as<std::string>());
    }
    if (!seed.empty()) ctx.config.set("seed", seed);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value");
      ctx.config.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
  } catch (const std::exception& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(ctx);
    if (train->parsed()) return cmd_train(ctx);
    if (extract->parsed()) return cmd_extract_policy(ctx);
    if (eval->parsed()) return cmd_eval(ctx);
    if (oracle->parsed()) return cmd_oracle_check(ctx);
    if (ablate->parsed()) return cmd_ablate(ctx);
    if (pipeline->parsed()) return cmd_pipeline(ctx);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace comadice
