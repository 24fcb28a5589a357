#pragma once

// Command-line driver. Subcommands: gen-data, train, grow, eval,
// noise-sweep, calib. Exit codes: 0 success, 1 self-test mismatch,
// 2 config error, 3 data error, 4 numeric failure.

namespace nemo {

int run_cli(int argc, char** argv);

}  // namespace nemo
