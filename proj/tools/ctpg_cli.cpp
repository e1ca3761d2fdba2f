#include <iostream>

#include "ctpg/cli.hpp"

int main(int argc, char** argv) { return ctpg::cli::run(argc, argv, std::cout, std::cerr); }
