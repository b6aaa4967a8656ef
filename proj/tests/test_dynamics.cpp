#include <doctest.h>

TEST_SUITE("dynamics") {
  TEST_CASE("placeholder") { CHECK(true); }
}
