#include "firn/cli.hpp"

int main(int argc, char** argv) { return firn::run_cli(argc, argv); }
