#include "manidiff/cli.hpp"

int main(int argc, char** argv) { return manidiff::cli::run_cli(argc, argv); }
