#include <iostream>
#include <string>
#include <vector>

#include "itpn/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return itpn::run_command(args, std::cout, std::cerr);
}
