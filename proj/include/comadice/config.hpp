#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "comadice/extract.hpp"
#include "comadice/trainer.hpp"

namespace comadice {

/// Flat `key = value` run configuration. Values resolve as command line over
/// file over built-in defaults; keys outside the known set are rejected.
class RunConfig {
 public:
  RunConfig();

  /// Reads `key = value` lines; `#` starts a comment. Throws
  /// std::invalid_argument naming the file and line on unknown keys.
  void load_file(const std::string& path);
  /// Parses text in the file format (used by load_file and tests).
  void load_text(std::string_view text, std::string_view origin);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  int get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  /// Comma-separated list, tokens trimmed.
  std::vector<std::string> get_list(const std::string& key) const;

  /// Every key in sorted order, one `key = value` per line.
  std::string dump() const;

  static const std::map<std::string, std::string>& defaults();

 private:
  std::map<std::string, std::string> values_;
};

/// Training settings; `gamma = env` resolves to `env_gamma`.
TrainConfig train_config(const RunConfig& rc, double env_gamma);
PolicyConfig policy_config(const RunConfig& rc);

}  // namespace comadice
