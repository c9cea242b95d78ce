#include "cli.hpp"

int main(int argc, char** argv) { return dclose::cli::run_cli(argc, argv); }
