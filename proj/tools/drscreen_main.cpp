#include <iostream>
#include <string>
#include <vector>

#include "drscreen/cli.hpp"

int main(int argc, char** argv) {
  return drscreen::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
