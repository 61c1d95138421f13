#include <iostream>

#include "opacgp/cli.hpp"

int main(int argc, char** argv) { return opacgp::cli::run_main(argc, argv, std::cout, std::cerr); }
