#include <iostream>
#include <string>
#include <vector>

#include "descrl/cli/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return descrl::cli::run(args, std::cout, std::cerr);
}
