#include <iostream>

#include "bem/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return bem::run_cli(args, std::cout, std::cerr);
}
