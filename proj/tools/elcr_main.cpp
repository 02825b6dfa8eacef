#include "elcr/cli_io.hpp"

#include <iostream>

int main(int argc, char** argv) { return elcr::run_cli(argc, argv, std::cout, std::cerr); }
