#include "lapact/cli.hpp"

int main(int argc, char **argv) { return lapact::cli::run(argc, argv); }
