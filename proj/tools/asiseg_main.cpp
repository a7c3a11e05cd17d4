#include "asiseg/cli.hpp"

int main(int argc, char** argv) { return asiseg::cli_main(argc, argv); }
