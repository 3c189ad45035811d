#include <iostream>

#include "ttl/bench/commands.hpp"

int main(int argc, char** argv) { return ttl::bench::run_cli(argc, argv, std::cout, std::cerr); }
