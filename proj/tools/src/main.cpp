#include <iostream>
#include <string>
#include <vector>

#include "faultformer/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return faultformer::cli::run_cli(args, std::cout, std::cerr);
}
