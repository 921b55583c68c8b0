#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "hiprompt/error.hpp"
#include "hiprompt/run_config.hpp"

namespace hiprompt {

// Stable process exit codes.
enum ExitCode : int {
  exit_ok = 0,
  exit_check_failed = 1,
  exit_config = 2,
  exit_client = 3,
  exit_numeric = 4,
  exit_io = 5,
};

int exit_code_for(ErrorCode code);

struct CommandOptions {
  std::optional<std::string> input;       // eval: corpus .jsonl or feature file
  std::optional<std::string> labels;      // eval: labels sidecar for feature input
  std::optional<std::string> checkpoint;  // eval: defaults to <out>/checkpoint.bin
  std::optional<std::string> export_features;
  int trials = 20;
  bool inject_bug = false;
};

// Each command writes <out>/<name>.config.json, echoes it to `out`, and
// returns an exit code; library errors are reported on `err`.
int cmd_acquire(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_eval(const RunConfig& cfg, const CommandOptions& opt, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const RunConfig& cfg, const CommandOptions& opt, std::ostream& out, std::ostream& err);

}  // namespace hiprompt
