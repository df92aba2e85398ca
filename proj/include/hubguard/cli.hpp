#pragma once

namespace hubguard::cli {

/// Runs one subcommand. Returns 0 on success, 1 on a domain error, 2 on a usage error.
int dispatch(int argc, char** argv);

}  // namespace hubguard::cli
