#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "safectl/config.hpp"

namespace safectl::cli {

enum ExitCode : int { exit_ok = 0, exit_verdict = 1, exit_usage = 2 };

const std::vector<std::string>& command_names();

/// Runs one command with a fully resolved config. Artifacts go to the config's output_dir;
/// a human-readable summary goes to `out`. Throws ConfigError, DomainError or ParseError
/// for usage problems.
int run_command(const std::string& command, const RunConfig& config, std::ostream& out);

/// argv-level entry point: parses flags, loads the config, maps errors to exit codes.
int main_entry(int argc, const char* const* argv, std::ostream& out);

}  // namespace safectl::cli
