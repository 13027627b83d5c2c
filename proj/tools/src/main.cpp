#include <iostream>
#include <string>
#include <vector>

#include "node_adapter_cli/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return node_adapter::cli::run(args, std::cout, std::cerr);
}
