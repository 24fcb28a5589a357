#include "nemo/cli.hpp"

int main(int argc, char** argv) { return nemo::run_cli(argc, argv); }
