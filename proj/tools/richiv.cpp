#include <iostream>

#include "richiv/cli.hpp"

int main(int argc, char** argv) { return richiv::run_cli(argc, argv, std::cout, std::cerr); }
