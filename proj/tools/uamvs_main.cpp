#include <iostream>

#include "uamvs/cli.hpp"

int main(int argc, char** argv) { return uamvs::cli::run(argc, argv, std::cout, std::cerr); }
