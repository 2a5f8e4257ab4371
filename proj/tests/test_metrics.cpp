#include "doctest_compat.hpp"
#include "udm/fixtures.hpp"
#include "udm/metrics.hpp"

using namespace udm;

namespace {
torch::Tensor fixture(std::int64_t n, std::uint64_t seed) {
  return make_pristine_image(n, n, seed).tensor();
}
torch::Tensor noisy(const torch::Tensor& x, double sigma, std::uint64_t seed) {
  auto g = make_generator(seed);
  return (x + sigma * torch::randn(x.sizes(), g, x.options())).clamp(0, 1);
}
}  // namespace

TEST_CASE("ssim identity is exactly one") {
  auto x = fixture(64, 1);
  CHECK(ssim(x, x).item<double>() == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("ssim of an image against its negative is negative") {
  auto x = fixture(128, 2);
  CHECK(ssim(x, 1.0 - x).item<double>() < 0.0);
}

TEST_CASE("ssim under sigma=0.1 noise lands in the frozen band") {
  for (std::uint64_t s = 1; s <= 3; ++s) {
    auto x = fixture(256, s);
    auto v = ssim(x, noisy(x, 0.1, 100 + s)).item<double>();
    CHECK(v > 0.2);
    CHECK(v < 0.8);
  }
}

TEST_CASE("ssim stays within [-1,1] and rejects bad inputs") {
  for (std::uint64_t s = 0; s < 4; ++s) {
    auto a = torch::rand({3, 48, 48}, make_generator(s));
    auto b = torch::rand({3, 48, 48}, make_generator(s + 50));
    auto v = ssim(a, b).item<double>();
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  CHECK_THROWS_AS(ssim(torch::rand({3, 64, 64}), torch::rand({3, 64, 32})), ShapeError);
  CHECK_THROWS_AS(ssim(torch::rand({3, 16, 16}), torch::rand({3, 16, 16})), SizeError);
}

TEST_CASE("ms_ssim identity, monotonicity, and reduced-scale handling") {
  auto x = fixture(256, 4);
  CHECK(ms_ssim(x, x).item<double>() == doctest::Approx(1.0).epsilon(1e-6));

  auto light = ms_ssim(x, noisy(x, 0.05, 7)).item<double>();
  auto heavy = ms_ssim(x, noisy(x, 0.25, 7)).item<double>();
  CHECK(light > heavy);

  // 160px is the five-scale threshold; 64px falls back to fewer scales.
  auto y160 = fixture(160, 5);
  CHECK(ms_ssim(y160, noisy(y160, 0.1, 8)).item<double>() < 1.0);
  auto y64 = fixture(64, 6);
  CHECK(ms_ssim(y64, y64).item<double>() == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("psnr closed forms") {
  auto a = torch::zeros({3, 32, 32});
  auto b = torch::full({3, 32, 32}, 0.1f);
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-4));
  CHECK(psnr(a, a) > 100.0);
}

TEST_CASE("d_perc identity and symmetry") {
  auto a = fixture(64, 7).to(torch::kFloat64);
  auto b = fixture(64, 8).to(torch::kFloat64);
  CHECK(std::abs(d_perc(a, a).item<double>()) < 1e-9);
  CHECK(d_perc(a, b).item<double>() == d_perc(b, a).item<double>());
  CHECK(d_perc(a, b).item<double>() > 0.0);
}

TEST_CASE("d_perc is insensitive to the noise's random state") {
  // Distance between two realizations of the same noise level must be
  // smaller than distance between clean and noisy.
  for (std::uint64_t s = 1; s <= 3; ++s) {
    auto x = fixture(128, 20 + s);
    auto n1 = noisy(x, 0.1, 300 + s);
    auto n2 = noisy(x, 0.1, 400 + s);
    auto clean_vs_noisy = d_perc(x, n1).item<double>();
    auto noisy_vs_noisy = d_perc(n1, n2).item<double>();
    CHECK(noisy_vs_noisy < clean_vs_noisy);
  }
}

TEST_CASE("d_perc is bit-reproducible and seeded") {
  auto a = fixture(64, 9);
  auto b = noisy(a, 0.2, 31);
  auto d1 = d_perc(a, b).item<double>();
  auto d2 = d_perc(a, b).item<double>();
  CHECK(d1 == d2);
  PerceptualPyramid p1(PerceptualPyramid::kDefaultSeed), p2(PerceptualPyramid::kDefaultSeed);
  CHECK(p1.distance(a, b).item<double>() == d1);
  PerceptualPyramid other(123);
  CHECK(other.distance(a, b).item<double>() != d1);
}

TEST_CASE("d_perc carries gradient to both inputs") {
  auto a = fixture(48, 10).requires_grad_(true);
  auto b = noisy(fixture(48, 10), 0.1, 5).requires_grad_(true);
  auto d = d_perc(a, b);
  d.backward();
  CHECK(a.grad().abs().sum().item<double>() > 0.0);
  CHECK(b.grad().abs().sum().item<double>() > 0.0);
  CHECK(torch::isfinite(a.grad()).all().item<bool>());
}

TEST_CASE("d_perc separates degradation severities") {
  auto x = fixture(128, 11);
  auto mild = noisy(x, 0.02, 1);
  auto severe = noisy(x, 0.4, 1);
  CHECK(d_perc(x, mild).item<double>() < d_perc(x, severe).item<double>());
}
