#include <algorithm>
#include <map>
#include <set>
#include <vector>

#include <doctest.h>

#include "pmim/rng.hpp"

using pmim::Rng;

TEST_CASE("same seed gives identical draws") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("substreams are independent of draw order") {
  Rng first = Rng::substream(7, "mask");
  Rng second = Rng::substream(7, "augment");
  // consuming one stream must not affect the other
  Rng first_again = Rng::substream(7, "mask");
  for (int i = 0; i < 10; ++i) second.next_u64();
  for (int i = 0; i < 10; ++i) CHECK(first.next_u64() == first_again.next_u64());
}

TEST_CASE("indexed substreams differ per index but reproduce") {
  Rng a = Rng::substream(7, "mask", 3);
  Rng b = Rng::substream(7, "mask", 4);
  Rng a2 = Rng::substream(7, "mask", 3);
  CHECK(a.next_u64() == a2.next_u64());
  // distinct indexes should not produce the same stream head
  Rng a3 = Rng::substream(7, "mask", 3);
  CHECK(a3.next_u64() != b.next_u64());
}

TEST_CASE("uniform stays in [0,1) and covers both halves") {
  Rng rng(42);
  int low = 0;
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    if (u < 0.5) ++low;
  }
  CHECK(low > 400);
  CHECK(low < 600);
}

TEST_CASE("below is in range and roughly uniform") {
  Rng rng(42);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto v = rng.below(7);
    REQUIRE(v < 7);
    ++counts[static_cast<size_t>(v)];
  }
  for (int c : counts) {
    CHECK(c > 800);
    CHECK(c < 1200);
  }
}

TEST_CASE("truncated normal respects the two-sigma cut") {
  Rng rng(42);
  for (int i = 0; i < 2000; ++i) CHECK(std::abs(rng.trunc_normal(0.02)) <= 0.04);
}

TEST_CASE("normal has near-zero mean and unit variance") {
  Rng rng(1);
  double sum = 0, sq = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  CHECK(std::abs(sum / n) < 0.03);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("sample_without_replacement gives distinct in-range values") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = rng.sample_without_replacement(20, 8);
    REQUIRE(s.size() == 8);
    std::set<int> uniq(s.begin(), s.end());
    CHECK(uniq.size() == 8);
    for (int v : s) {
      CHECK(v >= 0);
      CHECK(v < 20);
    }
  }
}

TEST_CASE("sample_without_replacement hits every k-subset frequency") {
  // n=4, k=2: each of the 6 subsets should appear ~1/6 of the time
  Rng rng(5);
  std::map<std::pair<int, int>, int> hits;
  const int trials = 12000;
  for (int i = 0; i < trials; ++i) {
    auto s = rng.sample_without_replacement(4, 2);
    std::sort(s.begin(), s.end());
    ++hits[{s[0], s[1]}];
  }
  REQUIRE(hits.size() == 6);
  for (const auto& [k, c] : hits) {
    CHECK(c > trials / 6 - 400);
    CHECK(c < trials / 6 + 400);
  }
}

TEST_CASE("shuffle permutes") {
  Rng rng(3);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[static_cast<size_t>(i)] = i;
  auto w = v;
  rng.shuffle(w);
  CHECK(w != v);
  std::sort(w.begin(), w.end());
  CHECK(w == v);
}

TEST_CASE("serialized state round-trips bitwise") {
  Rng a(77);
  for (int i = 0; i < 13; ++i) a.next_u64();
  Rng b;
  b.deserialize(a.serialize());
  for (int i = 0; i < 20; ++i) CHECK(a.next_u64() == b.next_u64());
}
