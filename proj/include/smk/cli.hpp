#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace smk {

/// Exit codes: 0 success, 1 usage or I/O failure, 2 contract or input
/// violation, 3 numerical failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace smk
