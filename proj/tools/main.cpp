#include <iostream>
#include <set>
#include <string>

#include "fmri3d/cli.hpp"

int main(int argc, char** argv) {
  std::set<std::string> faults;
#ifdef FMRI3D_INJECT_FAULT
  faults.insert(FMRI3D_INJECT_FAULT);
#endif
  return fmri3d::cli::run_cli(argc, argv, std::cout, std::cerr, faults);
}
