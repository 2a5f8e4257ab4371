#include "doctest_compat.hpp"

#include <set>

#include "udm/common.hpp"

using namespace udm;

TEST_CASE("splitmix64 reference values") {
  // Reference outputs for seed 1234567 from the published splitmix64 stream.
  std::uint64_t s = 1234567;
  auto next = [&s] {
    s += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  };
  std::uint64_t expect = next();
  CHECK(splitmix64(1234567) == expect);
}

TEST_CASE("mix_seed distinct across tags and stable across calls") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t tag = 0; tag < 64; ++tag) {
    auto v = mix_seed(42, tag);
    CHECK(v == mix_seed(42, tag));
    seen.insert(v);
  }
  CHECK(seen.size() == 64);
  CHECK(mix_seed(42, 1) != mix_seed(43, 1));
  CHECK(mix_seed(42, 1, 2) != mix_seed(42, 2, 1));
}

TEST_CASE("make_generator reproducibility") {
  auto g1 = make_generator(99);
  auto g2 = make_generator(99);
  auto a = torch::randn({16}, g1);
  auto b = torch::randn({16}, g2);
  CHECK(a.equal(b));
  auto g3 = make_generator(100);
  CHECK(!torch::randn({16}, g3).equal(a));
}

TEST_CASE("check_finite flags NaN and Inf") {
  CHECK_NOTHROW(check_finite(torch::ones({4}), "ok"));
  auto bad = torch::ones({4});
  bad[2] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(check_finite(bad, "nan-case"), NumericError);
  bad[2] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(check_finite(bad, "inf-case"), NumericError);
}

TEST_CASE("pad_to_multiple and crop_to round-trip") {
  auto t = torch::rand({3, 37, 61});
  auto p = pad_to_multiple(t, 8);
  CHECK(p.tensor.size(1) == 40);
  CHECK(p.tensor.size(2) == 64);
  CHECK(p.orig_h == 37);
  CHECK(p.orig_w == 61);
  auto back = crop_to(p.tensor, p.orig_h, p.orig_w);
  CHECK(back.equal(t));

  // Already aligned input is returned unchanged.
  auto t2 = torch::rand({1, 3, 32, 32});
  auto p2 = pad_to_multiple(t2, 8);
  CHECK(p2.tensor.equal(t2));
}

TEST_CASE("pad_to_multiple reflects rather than zero-fills") {
  auto t = torch::arange(25, torch::kFloat32).reshape({1, 5, 5});
  auto p = pad_to_multiple(t, 8);
  // Reflection of column 4 beyond the right edge is column 3, 2, 1.
  CHECK(p.tensor[0][0][5].item<float>() == doctest::Approx(3.0f));
  CHECK(p.tensor[0][0][6].item<float>() == doctest::Approx(2.0f));
}
