// Command-line entry point. Subcommands are implemented in cli.hpp.
#include "ffdconv/cli.hpp"

int main(int argc, char** argv) { return ffdconv::cli::run(argc, argv); }
