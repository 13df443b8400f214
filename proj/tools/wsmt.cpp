#include <iostream>
#include <string>
#include <vector>

#include "wsmt/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return wsmt::dispatch(args, std::cout, std::cerr);
}
