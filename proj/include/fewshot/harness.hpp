#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "fewshot/metatest.hpp"
#include "json.hpp"

namespace fewshot {

// Command-line or config mistakes; mapped to exit code 1 (runtime failures
// such as missing or malformed files map to exit code 2).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Built-in defaults for every config key; a --config file and then explicit
// flags are merged on top, and the result is echoed into the output directory.
nlohmann::json default_config();

// Shortest round-trip decimal form of v.
std::string fmt_double(double v);

// Appends one row per evaluation (header written when the file is new):
// schema_version,strategy,n_tasks,mean_acc,ci95,steps,seed
void results_ledger_append(const std::string& path, const EvalReport& report);

// Minimal CSV reader for the artifact's own outputs (no quoting).
std::vector<std::vector<std::string>> read_csv(const std::string& path);

// Full command dispatch: gen-data | pretrain | train | eval | spread | curve |
// sweep | baseline. Returns the process exit code: 0 ok, 1 usage, 2 runtime.
int cli_dispatch(const std::vector<std::string>& args);
int cli_dispatch(int argc, const char* const* argv);

}  // namespace fewshot
