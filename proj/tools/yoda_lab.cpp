#include <string>
#include <vector>

#include "yoda/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return yoda::cli::run(args);
}
