#include <iostream>

#include "diano/cli.hpp"

int main(int argc, char** argv) { return diano::run_cli(argc, argv, std::cout, std::cerr); }
