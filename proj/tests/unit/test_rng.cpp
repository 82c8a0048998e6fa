#include <doctest.h>

#include "cir/rng.hpp"

using cir::Rng;

TEST_SUITE_BEGIN("rng");

TEST_CASE("identical seeds give identical streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    CHECK(a.uniform() == b.uniform());
    CHECK(a.normal() == b.normal());
    CHECK(a.uniform_int(0, 99) == b.uniform_int(0, 99));
  }
}

TEST_CASE("serialize round-trips mid-stream") {
  Rng a(7);
  for (int i = 0; i < 57; ++i) {
    a.uniform();
    a.normal();
  }
  Rng b = Rng::deserialize(a.serialize());
  for (int i = 0; i < 500; ++i) {
    CHECK(a.normal() == b.normal());
    CHECK(a.uniform_int(-5, 5) == b.uniform_int(-5, 5));
  }
}

TEST_CASE("uniform_int stays in bounds and hits every value") {
  Rng rng(3);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const int64_t v = rng.uniform_int(2, 8);
    REQUIRE(v >= 2);
    REQUIRE(v <= 8);
    counts[v - 2]++;
  }
  for (int c : counts) CHECK(c > 700);
}

TEST_CASE("normal moments are sane") {
  Rng rng(11);
  double sum = 0.0, sum2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sum2 += x * x;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("shuffle is deterministic per seed") {
  std::vector<int> v1(20), v2(20);
  for (int i = 0; i < 20; ++i) v1[i] = v2[i] = i;
  Rng a(9), b(9);
  a.shuffle(v1);
  b.shuffle(v2);
  CHECK(v1 == v2);
  CHECK(v1 != std::vector<int>{0, 1, 2,  3,  4,  5,  6,  7,  8,  9,
                               10, 11, 12, 13, 14, 15, 16, 17, 18, 19});
}

TEST_SUITE_END();
