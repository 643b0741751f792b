#include "comadice/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace comadice {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

const std::map<std::string, std::string>& RunConfig::defaults() {
  static const std::map<std::string, std::string> d = {
      {"env", ""},
      {"data", ""},
      {"behavior", "mix:0.3"},
      {"trajectories", "1000"},
      {"horizon", "50"},
      {"seed", "0"},
      {"alpha", "10"},
      {"gamma", "env"},
      {"lr_q", "1e-4"},
      {"lr_nu", "1e-4"},
      {"lr_theta", "1e-4"},
      {"batch_size", "128"},
      {"steps", "1000"},
      {"divergence", "soft-chi2"},
      {"kl_plain_generator", "false"},
      {"mixer_depth", "1"},
      {"fixed_sum_mixer", "false"},
      {"backend", "tabular"},
      {"hidden_agent", "32"},
      {"hidden_mixer", "16"},
      {"activation", "elu"},
      {"separate_mixers", "false"},
      {"optimizer", "sgd"},
      {"nu_gradient", "bootstrap"},
      {"eval_every", "0"},
      {"policy_lr", "1e-4"},
      {"policy_steps", "1000"},
      {"policy_batch_size", "128"},
      {"policy_optimizer", "sgd"},
      {"policy_solver", "auto"},
      {"eval_episodes", "32"},
      {"eval_horizon", "100"},
      {"params", ""},
      {"policy", ""},
      {"log", ""},
      {"alphas", "0.01,0.1,1,10,100"},
      {"divergences", "soft-chi2"},
      {"depths", "1"},
      {"seeds", "0"},
  };
  return d;
}

RunConfig::RunConfig() : values_(defaults()) {}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("unknown config key '" + key + "'");
  it->second = value;
}

void RunConfig::load_text(std::string_view text, std::string_view origin) {
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = std::string(origin) + ":" + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw std::invalid_argument(where + "expected 'key = value'");
    const std::string key = trim(body.substr(0, eq));
    if (!values_.count(key)) throw std::invalid_argument(where + "unknown config key '" + key + "'");
    values_[key] = trim(body.substr(eq + 1));
  }
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  load_text(buf.str(), path);
}

bool RunConfig::has(const std::string& key) const {
  auto it = values_.find(key);
  return it != values_.end() && !it->second.empty();
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) {
    throw std::invalid_argument("config key '" + key + "': not a number: '" + v + "'");
  }
  return x;
}

int RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  std::size_t used = 0;
  long x = 0;
  try {
    x = std::stol(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || x < -2147483647L || x > 2147483647L) {
    throw std::invalid_argument("config key '" + key + "': not an integer: '" + v + "'");
  }
  return static_cast<int>(x);
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& v = get(key);
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] != '-') x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) {
    throw std::invalid_argument("config key '" + key + "': not a non-negative integer: '" + v + "'");
  }
  return x;
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::istringstream in(get(key));
  std::string tok;
  while (std::getline(in, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

std::string RunConfig::dump() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

TrainConfig train_config(const RunConfig& rc, double env_gamma) {
  TrainConfig c;
  c.alpha = rc.get_double("alpha");
  c.gamma = rc.get("gamma") == "env" ? env_gamma : rc.get_double("gamma");
  c.lr_q = rc.get_double("lr_q");
  c.lr_nu = rc.get_double("lr_nu");
  c.lr_theta = rc.get_double("lr_theta");
  c.batch_size = rc.get_int("batch_size");
  c.steps = rc.get_int("steps");
  c.seed = rc.get_u64("seed");
  c.divergence = parse_divergence(rc.get("divergence"));
  c.divergence.kl_plain_generator = rc.get_bool("kl_plain_generator");
  c.mixer_depth = rc.get_int("mixer_depth");
  c.fixed_sum_mixer = rc.get_bool("fixed_sum_mixer");
  c.backend = parse_backend(rc.get("backend"));
  c.separate_mixers = rc.get_bool("separate_mixers");
  c.hidden = rc.get_int("hidden_agent");
  c.hidden_mixer = rc.get_int("hidden_mixer");
  c.mixer_activation = parse_activation(rc.get("activation"));
  c.optimizer = parse_optimizer(rc.get("optimizer"));
  c.nu_gradient = parse_nu_gradient(rc.get("nu_gradient"));
  c.eval_every = rc.get_int("eval_every");
  c.validate();
  return c;
}

PolicyConfig policy_config(const RunConfig& rc) {
  PolicyConfig c;
  c.backend = parse_backend(rc.get("backend"));
  c.hidden = rc.get_int("hidden_agent");
  c.lr = rc.get_double("policy_lr");
  c.steps = rc.get_int("policy_steps");
  c.batch_size = rc.get_int("policy_batch_size");
  c.seed = rc.get_u64("seed");
  c.optimizer = parse_optimizer(rc.get("policy_optimizer"));
  c.solver = parse_policy_solver(rc.get("policy_solver"));
  if (!(c.lr > 0.0) || c.steps < 0 || c.batch_size < 0) {
    throw std::invalid_argument("policy_lr must be positive, policy_steps/policy_batch_size >= 0");
  }
  return c;
}

}  // namespace comadice
