#include <iostream>

#include "piqn/cli.hpp"

int main(int argc, char** argv) { return piqn::run_cli(argc, argv, std::cout, std::cerr); }
