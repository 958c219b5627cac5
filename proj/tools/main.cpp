#include <iostream>

#include "xbo/cli.hpp"

int main(int argc, char** argv) {
  return xbo::run_cli(argc, argv, std::cout, std::cerr);
}
