#include <iostream>
#include <string>
#include <vector>

#include "pcnn/app.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return pcnn::run_cli(args, std::cout, std::cerr);
}
