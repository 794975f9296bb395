#include <iostream>

#include "hsocc/cli/cli.hpp"

int main(int argc, char** argv) { return hsocc::cli::run(argc, argv, std::cout, std::cerr); }
