#include "scaleseg/cli.hpp"

int main(int argc, char** argv) { return scaleseg::cli_main(argc, argv); }
