#include <string>
#include <vector>

#include "cann/cli.hpp"

int main(int argc, char** argv) {
  return cann::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
