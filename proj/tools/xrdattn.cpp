#include <iostream>
#include <string>
#include <vector>

#include "xrdattn/cli.hpp"
#include "xrdattn/runtime.hpp"

int main(int argc, char** argv) {
  xrdattn::tune_allocator();
  std::vector<std::string> args(argv + 1, argv + argc);
  return xrdattn::cli::run(args, std::cout, std::cerr);
}
