#pragma once

// Command-line front end: gen-data, train-classifier, explain, distill, curve, render, objective.
//
// Exit codes: 0 success, 1 internal or numeric failure, 2 usage or input error.
// Flags override values from --config (a flat JSON object keyed by long flag names).

#include <iosfwd>
#include <string>
#include <vector>

namespace attrib {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

/// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace attrib
