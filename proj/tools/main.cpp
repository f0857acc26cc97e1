#include <iostream>

#include "paudit/cli.hpp"

int main(int argc, char** argv) { return paudit::run_cli(argc, argv, std::cout, std::cerr); }
