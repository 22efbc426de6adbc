#include <iostream>

#include "hbmpart/cli.hpp"

int main(int argc, char** argv) {
  return hbmpart::cli_main(argc, argv, std::cout, std::cerr);
}
