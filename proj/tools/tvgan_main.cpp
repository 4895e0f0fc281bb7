#include <iostream>

#include "tvgan/cli.hpp"

int main(int argc, char** argv) { return tvgan::run_cli(argc, argv, std::cout, std::cerr); }
