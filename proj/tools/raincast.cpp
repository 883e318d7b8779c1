#include <string>
#include <vector>

#include "raincast/cli_main.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return raincast::cli::run_cli(std::move(args));
}
