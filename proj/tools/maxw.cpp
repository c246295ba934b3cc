#include "maxw/cli.hpp"

int main(int argc, char** argv) {
  return maxw::cli(std::vector<std::string>(argv + 1, argv + argc));
}
