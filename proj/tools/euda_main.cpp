#include <iostream>
#include <string>
#include <vector>

#include "euda/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return euda::cli::run(args, std::cout, std::cerr);
}
