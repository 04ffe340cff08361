#include <iostream>

#include "ctxseg/cli/app.hpp"

int main(int argc, char** argv) { return ctxseg::run_cli(argc, argv, std::cout, std::cerr); }
