#include <string>
#include <vector>

#include "kp/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return kp::run_cli(args);
}
