#pragma once

#include <iosfwd>

namespace lungsynth {

// Entry point of the `lungsynth` command. Exit codes: 0 success, 2 config or
// usage error, 3 data integrity error, 4 numerical failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lungsynth
