#include <iostream>
#include <string>
#include <vector>

#include "deci/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return deci::run_cli(args, std::cout, std::cerr);
}
