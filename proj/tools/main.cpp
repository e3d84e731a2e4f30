#include <iostream>

#include "btsr/cli.hpp"

int main(int argc, char** argv) { return btsr::run_cli(argc, argv, std::cout, std::cerr); }
