#include <iostream>

#include "cloudseg/cli.hpp"

int main(int argc, char** argv) { return cloudseg::run_cli(argc, argv, std::cout, std::cerr); }
