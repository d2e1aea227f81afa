#include <iostream>

#include "rdcomm/cli.hpp"

int main(int argc, char** argv) { return rdcomm::run_cli(argc, argv, std::cout, std::cerr); }
