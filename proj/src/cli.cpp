#include "firn/cli.hpp"

namespace firn {

int run_cli(int, char**) { return 2; }  // placeholder until the CLI lands

}  // namespace firn
