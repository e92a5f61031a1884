#include <doctest.h>

#include "gradsuite.hpp"

// Every differentiable primitive against central finite differences, 64-bit,
// 20 random instances each.
TEST_CASE("gradient suite: all primitives match finite differences") {
  auto worst = wtest::run_grad_suite(20, 1234);
  for (const auto& [name, err] : worst) {
    INFO("primitive: " << name);
    CHECK(err < 1e-4);
  }
}
