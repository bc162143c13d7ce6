#include <iostream>

#include "cli/commands.hpp"

int main(int argc, char** argv) {
  dgcn::cli::configure_allocator();
  return dgcn::cli::run(argc, argv, std::cout, std::cerr);
}
