#ifndef ITNAS_CLI_APP_HPP
#define ITNAS_CLI_APP_HPP

#include <iosfwd>

namespace itnas::cli {

// Parses arguments and dispatches to a subcommand; returns the exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace itnas::cli

#endif // ITNAS_CLI_APP_HPP
