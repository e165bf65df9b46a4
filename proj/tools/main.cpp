#include "scrmed/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return scrmed::run_cli(argc, argv, std::cout, std::cerr); }
