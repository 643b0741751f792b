#pragma once

#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "comadice/config.hpp"

namespace comadice {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitRuntime = 2, kExitThreshold = 3 };

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Shared state of one command invocation.
struct CommandContext {
  RunConfig config;
  std::string out_dir = ".";
  int jobs = 1;
  bool dry_run = false;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
};

int cmd_gen_data(const CommandContext& ctx);
int cmd_train(const CommandContext& ctx);
int cmd_extract_policy(const CommandContext& ctx);
int cmd_eval(const CommandContext& ctx);
int cmd_oracle_check(const CommandContext& ctx);
int cmd_ablate(const CommandContext& ctx);
int cmd_pipeline(const CommandContext& ctx);

/// Parses `args` (without the program name), runs the subcommand and maps
/// failures to exit codes.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// RFC-4180 field quoting.
std::string csv_field(const std::string& s);

}  // namespace comadice
