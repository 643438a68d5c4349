#include <iostream>
#include <string>
#include <vector>

#include "mstts/app/cli.h"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return mstts::app::run_cli(args, std::cout, std::cerr);
}
