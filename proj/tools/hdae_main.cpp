#include <string>
#include <vector>

#include "hdae/cli.hpp"

int main(int argc, char** argv) {
  return hdae::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
