#include <cstdlib>
#include <iostream>

#include "lungnet_cli/commands.hpp"

int main(int argc, char** argv) {
    return lungnet::cli::run(argc, argv, std::cout, std::cerr, [](const char* name) { return std::getenv(name); });
}
