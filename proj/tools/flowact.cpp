#include "flowact/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return flowact::run_cli(argc, argv, std::cout, std::cerr); }
