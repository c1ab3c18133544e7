#pragma once

namespace dualslu {

// Full command-line front end. Returns the process exit code: 0 on
// success, 1 on runtime failure, 2 on configuration or usage errors.
// Errors are reported as one "error: <kind>: <message>" line on stderr.
int run_cli(int argc, const char* const* argv);

}  // namespace dualslu
