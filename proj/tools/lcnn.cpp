#include "cli.hpp"

int main(int argc, char** argv) {
  lcnn::tune_allocator();
  return lcnn::cli::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
