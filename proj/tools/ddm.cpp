#include <iostream>
#include <string>
#include <vector>

#include "ddm/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  const ddm::CommandOutcome out = ddm::run_cli(args);
  if (out.exit_code == ddm::exit_code::kOk && !out.artifacts.empty()) {
    for (const auto& p : out.artifacts) std::cout << p.string() << "\n";
    std::cerr << "done in " << out.seconds << " s\n";
  }
  return out.exit_code;
}
