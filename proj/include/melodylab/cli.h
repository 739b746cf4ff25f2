/**
 * @file cli.h
 * @brief Command-line front end binding the pipeline stages.
 */

#ifndef MELODYLAB_CLI_H
#define MELODYLAB_CLI_H

#include <ostream>
#include <string>
#include <vector>

namespace melodylab {

/// Runs one subcommand. `args` excludes the program name. Returns the process
/// exit status; diagnostics go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace melodylab

#endif  // MELODYLAB_CLI_H
