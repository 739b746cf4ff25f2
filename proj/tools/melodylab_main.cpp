#include <iostream>
#include <string>
#include <vector>

#include "melodylab/cli.h"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return melodylab::run_cli(args, std::cout, std::cerr);
}
