#include "spgat/cli.hpp"

int main(int argc, char** argv) { return spgat::cli_main(argc, argv); }
