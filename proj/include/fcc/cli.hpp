#pragma once

#include <map>
#include <string>
#include <vector>

namespace fcc::cli {

// Flat key=value run configuration ('#' comments allowed). Unknown or
// duplicate keys are validation errors; command-line flags override file
// values. The resolved configuration is echoed into the run directory.
std::map<std::string, std::string> load_config(const std::string& path);

// Subcommands: train, eval-fcc, retrieve, classify, inspect, export-features,
// gradcheck. Exit codes: 0 success, 1 validation error, 2 runtime error.
int dispatch(const std::vector<std::string>& args);

}  // namespace fcc::cli
