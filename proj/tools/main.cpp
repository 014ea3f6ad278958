#include <iostream>

#include "auxseg/cli.hpp"

int main(int argc, char** argv) { return auxseg::run_cli(argc, argv, std::cout, std::cerr); }
