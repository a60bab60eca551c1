#include <vector>

#include "mrg/cli.hpp"

int main(int argc, char** argv) {
  return mrg::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
