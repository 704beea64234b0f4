#pragma once

#include <ostream>

namespace shades {

/// Runs the built-in fixture checks of every module, printing one
/// "PASS|FAIL <name>" line each. Returns the number of failures.
int run_selftest(std::ostream& out);

}  // namespace shades
