#include <iostream>

#include "medrag/cli.hpp"

int main(int argc, char** argv) {
  return medrag::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
