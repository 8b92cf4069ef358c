#pragma once

#include <iostream>

namespace augforge {

/// The `augforge` command line. Returns 0 on success, 1 on runtime failure,
/// 2 on usage errors.
int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr);

}  // namespace augforge
