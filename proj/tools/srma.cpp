#include "srma/cli.hpp"

int main(int argc, char** argv) { return srma::cli::run_cli(argc, argv); }
