#include <iostream>

#include "qkdsim/cli.hpp"

int main(int argc, char** argv) { return qkdsim::run_cli(argc, argv, std::cout, std::cerr); }
