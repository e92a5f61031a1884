#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "testutil.hpp"
#include "warptrack/alloc_stats.hpp"

using namespace warptrack;

TEST_CASE("tensor basics: shape, data layout, invariants") {
  Tensor<float> t({2, 3}, false);
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  for (int64_t i = 0; i < 6; ++i) CHECK(t.data()[i] == 0.0f);

  auto u = Tensor<float>::from_data({2, 2}, {1, 2, 3, 4});
  CHECK(u.data()[3] == 4.0f);
  CHECK_THROWS_AS(Tensor<float>::from_data({2, 2}, {1, 2, 3}), std::invalid_argument);

  auto c = u.clone();
  c.data()[0] = 9;
  CHECK(u.data()[0] == 1.0f);  // clone is deep
  auto v = u;
  v.data()[0] = 7;
  CHECK(u.data()[0] == 7.0f);  // copies share the node
}

TEST_CASE("backward: sum gives ones, accumulation, disconnected leaves") {
  Tensor<double> x({3, 2}, true);
  for (int64_t i = 0; i < 6; ++i) x.data()[i] = double(i);
  Tensor<double> lonely({2}, true);
  {
    Tape<double> tape;
    auto loss = sum(x);
    backward(loss);
    for (int64_t i = 0; i < 6; ++i) CHECK(x.grad_cdata()[i] == 1.0);
    backward(loss);
    for (int64_t i = 0; i < 6; ++i) CHECK(x.grad_cdata()[i] == 2.0);  // repeated calls accumulate
    CHECK_FALSE(lonely.has_grad());
  }
}

TEST_CASE("backward: non-scalar loss and off-tape loss are usage errors") {
  Tensor<double> x({2}, true);
  Tape<double> tape;
  auto y = add(x, x);
  CHECK_THROWS_AS(backward(y), std::invalid_argument);  // not scalar
  Tensor<double> z = Tensor<double>::scalar(1.0, true);
  CHECK_THROWS_AS(backward(z), std::invalid_argument);  // never produced on the tape
}

TEST_CASE("no live tape means no recording") {
  Tensor<double> x({4}, true);
  auto y = relu(x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("forward determinism: identical inputs give identical bits") {
  Rng rng(42);
  auto a = Tensor<float>::uniform({16, 16}, rng, -1, 1);
  auto b = Tensor<float>::uniform({16, 16}, rng, -1, 1);
  auto c1 = matmul(a, b);
  auto c2 = matmul(a, b);
  CHECK(std::memcmp(c1.data(), c2.data(), size_t(c1.numel()) * 4) == 0);
}

TEST_CASE("WTT1 round trip is bit-exact") {
  Rng rng(7);
  auto t = Tensor<float>::uniform({3, 4, 5}, rng, -10, 10);
  std::ostringstream os(std::ios::binary);
  write_wtt1(os, t);
  std::istringstream is(os.str(), std::ios::binary);
  auto back = read_wtt1(is);
  REQUIRE(back.shape() == t.shape());
  CHECK(std::memcmp(back.data(), t.data(), size_t(t.numel()) * 4) == 0);
}

TEST_CASE("WTT1 corruption: bad magic and truncation carry byte offsets") {
  Rng rng(7);
  auto t = Tensor<float>::uniform({2, 2}, rng, -1, 1);
  std::ostringstream os(std::ios::binary);
  write_wtt1(os, t);
  std::string bytes = os.str();

  {
    std::string bad = bytes;
    bad[0] = 'X';
    std::istringstream is(bad, std::ios::binary);
    CHECK_THROWS_WITH_AS(read_wtt1(is), doctest::Contains("byte 0"), std::runtime_error);
  }
  {
    std::string trunc = bytes.substr(0, bytes.size() - 3);
    std::istringstream is(trunc, std::ios::binary);
    CHECK_THROWS_AS(read_wtt1(is), std::runtime_error);
  }
}

TEST_CASE("allocation accounting tracks live and peak bytes") {
  AllocWatch watch;
  {
    Tensor<float> a({256}, false);
    CHECK(watch.peak_above_base() >= 1024);
    CHECK(watch.max_single() >= 1024);
  }
  const int64_t peak_before = watch.peak_above_base();
  Tensor<float> b({16}, false);
  CHECK(watch.peak_above_base() == peak_before);  // smaller than previous peak
  CHECK(alloc_stats_snapshot().live_bytes >= 64);
}
