#include <iostream>

#include "semcodec/cli.hpp"

int main(int argc, char** argv) { return semcodec::cli::run(argc, argv, std::cout, std::cerr); }
