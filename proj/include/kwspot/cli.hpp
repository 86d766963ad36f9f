#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace kwspot {

/// Entry point of the `kwspot` executable. Results go to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kwspot
