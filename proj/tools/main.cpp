#include <iostream>

#include "lungsynth/cli.hpp"

int main(int argc, char** argv) { return lungsynth::run_cli(argc, argv, std::cout, std::cerr); }
