#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lapact::cli {

// Subcommands: validate, extract-clips, balance, train, evaluate, infer,
// report. Flags: --config <path>, --set k=v (repeatable), --actions a,b,c,
// --seed n, --out <dir>.
//
// Exit status: 0 success, 1 configuration or pipeline error (message names
// the field path or module), 2 usage error.
int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);
int run(int argc, char **argv);

} // namespace lapact::cli
