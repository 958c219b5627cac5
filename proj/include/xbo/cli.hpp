#pragma once

#include <iosfwd>

namespace xbo {

/// Entry point of the `xbo` command-line tool. Returns the process exit code.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace xbo
