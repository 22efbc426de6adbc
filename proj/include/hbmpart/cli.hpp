#pragma once

#include <iosfwd>

namespace hbmpart {

// The hbmpart command line: train, run, sweep-alpha, oracle, validate,
// export-plots. Returns the process exit code.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hbmpart
