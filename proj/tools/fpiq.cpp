#include <iostream>
#include <string>
#include <vector>

#include "fpiq/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return fpiq::cli::run(args, std::cout, std::cerr);
}
