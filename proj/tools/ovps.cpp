#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ovps/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::optional<std::string> env_seed;
  if (const char* s = std::getenv("OVPS_SEED")) env_seed = s;
  return ovps::run_cli(args, std::cout, std::cerr, env_seed);
}
