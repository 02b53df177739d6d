#pragma once

#include <ostream>

namespace capsforge::cli {

/// Runs one command line. Exit codes: 0 success, 1 domain error, 2 usage
/// error or unreadable input.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace capsforge::cli
