#pragma once

// Closed-form checks run by `s3d selftest`.

#include <string>
#include <vector>

namespace s3d {

struct SelfCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

// `with_gradients` adds the U-Net finite-difference sweep (about 15 s).
std::vector<SelfCheck> run_selftest(bool with_gradients = true);

}  // namespace s3d
