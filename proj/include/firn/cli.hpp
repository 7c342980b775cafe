#ifndef FIRN_CLI_HPP
#define FIRN_CLI_HPP

namespace firn {

// Entry point behind the firnfit binary.  Returns the process exit code:
// 0 on success, 2 on usage or input errors, 1 on internal failures.
int run_cli(int argc, char** argv);

}  // namespace firn

#endif
