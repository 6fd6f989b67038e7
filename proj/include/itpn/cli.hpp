#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace itpn {

// Subcommands: pretrain, finetune, linprobe, eval, reconstruct, gen-data.
// args[0] is the program name. Returns the process exit status.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace itpn
