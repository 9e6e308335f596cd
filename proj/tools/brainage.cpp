#include <iostream>

#include "brainage/cli.hpp"

int main(int argc, char** argv) {
  return brainage::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
