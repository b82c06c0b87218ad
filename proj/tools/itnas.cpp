#include <iostream>

#include "itnas/cli/app.hpp"

int main(int argc, char** argv) { return itnas::cli::run_cli(argc, argv, std::cout, std::cerr); }
