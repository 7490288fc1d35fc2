#include "proxie/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return proxie::run_cli(argc, argv, std::cout, std::cerr); }
