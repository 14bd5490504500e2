#pragma once

#include <string>
#include <vector>

namespace hil {

// Entry point of the `hil` tool: synth | cluster | associate | train | eval.
// args[0] is the program name. Returns the process exit status.
int run_cli(const std::vector<std::string>& args);

}  // namespace hil
