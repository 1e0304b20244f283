#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  const auto result = rccm::cli::run(args, std::cout, std::cerr);
  return result.exit_code;
}
