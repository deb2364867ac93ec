#include "doctest.h"
#include "tlab/battery.hpp"

using namespace tlab;

// the full 20-seed sweep runs in the acceptance suite; a reduced sweep here
// keeps the unit run fast while still touching every case
TEST_CASE("gradient battery passes at a reduced seed count") {
  auto results = run_gradcheck_battery(3);
  CHECK(results.size() >= 30);
  for (const auto& r : results) {
    CAPTURE(r.name);
    CHECK(r.passed);
  }
}
