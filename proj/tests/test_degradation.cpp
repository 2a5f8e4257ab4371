#include <map>

#include "doctest_compat.hpp"
#include "udm/degradation.hpp"

using namespace udm;

namespace {

DegradationSpec single_stage(StageKind kind, std::map<std::string, double> params,
                             std::uint64_t field_seed = 0) {
  StageSpec s;
  s.kind = kind;
  s.params = std::move(params);
  s.field_seed = field_seed;
  return DegradationSpec{{s}};
}

double psnr_db(const torch::Tensor& a, const torch::Tensor& b) {
  auto mse = (a - b).pow(2).mean().item<double>();
  return 10.0 * std::log10(1.0 / std::max(mse, 1e-12));
}

torch::Tensor checkerboard(std::int64_t n, std::int64_t period) {
  auto idx = torch::arange(n);
  auto cell = (idx.div(period, "floor") % 2);
  auto grid = (cell.view({-1, 1}) + cell.view({1, -1})) % 2;
  return grid.to(torch::kFloat32).unsqueeze(0).expand({3, n, n}).contiguous();
}

// Variance across a 4x4 tile grid of a per-tile statistic of the residual.
double tile_statistic_variance(const torch::Tensor& x, const torch::Tensor& y, bool use_std) {
  const auto h = x.size(-2) / 4, w = x.size(-1) / 4;
  auto resid = y - x;
  std::vector<double> stats;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      using torch::indexing::Slice;
      auto tile = resid.index({torch::indexing::Ellipsis, Slice(i * h, (i + 1) * h),
                               Slice(j * w, (j + 1) * w)});
      stats.push_back(use_std ? tile.std().item<double>() : tile.abs().mean().item<double>());
    }
  auto t = torch::tensor(stats);
  return t.var(/*unbiased=*/false).item<double>();
}

}  // namespace

TEST_CASE("zero-sigma noise is an exact identity") {
  auto x = torch::rand({3, 48, 40}, make_generator(5));
  auto y = apply_degradation(x, single_stage(StageKind::gaussian_noise, {{"sigma", 0.0}}), 7);
  CHECK(y.equal(x));
}

TEST_CASE("noise statistics on a constant image") {
  auto x = torch::full({3, 256, 256}, 0.5f);
  auto y = apply_degradation(x, single_stage(StageKind::gaussian_noise, {{"sigma", 0.1}}), 3);
  auto resid = y - x;
  CHECK(y.mean().item<double>() == doctest::Approx(0.5).epsilon(0.01));
  CHECK(std::abs(y.mean().item<double>() - 0.5) < 0.005);
  CHECK(std::abs(resid.std().item<double>() - 0.1) < 0.005);
}

TEST_CASE("apply is deterministic bit-for-bit") {
  auto x = torch::rand({3, 64, 64}, make_generator(9));
  auto pool = PoolConfig::default_pool();
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto spec = sample_pipeline(pool, s);
    auto y1 = apply_degradation(x, spec, 42);
    auto y2 = apply_degradation(x, spec, 42);
    CHECK(y1.equal(y2));
  }
}

TEST_CASE("jpeg at quality 100 is near-lossless") {
  auto x = torch::rand({3, 64, 64}, make_generator(13));
  auto y =
      apply_degradation(x, single_stage(StageKind::jpeg_compression, {{"quality", 100}}), 1);
  CHECK(psnr_db(x, y) >= 45.0);
}

TEST_CASE("jpeg at low quality visibly degrades but stays bounded") {
  auto x = torch::rand({3, 64, 64}, make_generator(14));
  auto y = apply_degradation(x, single_stage(StageKind::jpeg_compression, {{"quality", 5}}), 1);
  CHECK(psnr_db(x, y) < 30.0);
  CHECK(y.min().item<float>() >= 0.0f);
  CHECK(y.max().item<float>() <= 1.0f);
}

TEST_CASE("singleton pool yields that kind with in-range params") {
  auto pool = PoolConfig::single(StageKind::gaussian_noise);
  auto spec = sample_pipeline(pool, 1);
  REQUIRE(spec.stages.size() == 1);
  CHECK(spec.stages[0].kind == StageKind::gaussian_noise);
  auto sigma = spec.stages[0].params.at("sigma");
  CHECK(sigma >= 0.0);
  CHECK(sigma <= 0.5);
}

TEST_CASE("sample_pipeline is deterministic in its seed") {
  auto pool = PoolConfig::default_pool();
  for (std::uint64_t s : {0ULL, 1ULL, 99ULL}) {
    CHECK(sample_pipeline(pool, s) == sample_pipeline(pool, s));
  }
  CHECK(sample_pipeline(pool, 1) != sample_pipeline(pool, 2));
}

TEST_CASE("arity distribution matches its weights over 10k samples") {
  auto pool = PoolConfig::default_pool();
  std::map<std::size_t, int> arity_count;
  const int n = 10000;
  for (int i = 0; i < n; ++i)
    arity_count[sample_pipeline(pool, static_cast<std::uint64_t>(i)).stages.size()]++;
  for (std::size_t a = 1; a <= 4; ++a) {
    double freq = arity_count[a] / static_cast<double>(n);
    CHECK(std::abs(freq - 0.25) < 0.02);
  }
}

TEST_CASE("sampled specs come out in canonical order") {
  auto pool = PoolConfig::default_pool();
  for (std::uint64_t s = 0; s < 200; ++s) {
    auto spec = sample_pipeline(pool, s);
    for (std::size_t i = 1; i < spec.stages.size(); ++i)
      CHECK(stage_rank(spec.stages[i - 1].kind) <= stage_rank(spec.stages[i].kind));
    CHECK(spec == spec.canonicalized());
  }
}

TEST_CASE("empty pool is rejected") {
  PoolConfig pool;
  CHECK_THROWS_AS(sample_pipeline(pool, 1), ConfigError);
}

TEST_CASE("validation rejects malformed specs") {
  CHECK_THROWS_AS(DegradationSpec{}.validate(), ConfigError);

  auto five = single_stage(StageKind::gaussian_noise, {{"sigma", 0.1}});
  for (int i = 0; i < 4; ++i) five.stages.push_back(five.stages[0]);
  CHECK_THROWS_AS(five.validate(), ConfigError);

  CHECK_THROWS_AS(single_stage(StageKind::gaussian_noise, {{"sigma", 0.6}}).validate(),
                  ConfigError);
  CHECK_THROWS_AS(single_stage(StageKind::gaussian_noise, {}).validate(), ConfigError);
  CHECK_THROWS_AS(
      single_stage(StageKind::gaussian_noise, {{"sigma", 0.1}, {"zeta", 1.0}}).validate(),
      ConfigError);
  CHECK_THROWS_AS(single_stage(StageKind::jpeg_compression, {{"quality", 42.5}}).validate(),
                  ConfigError);
  CHECK_NOTHROW(single_stage(StageKind::jpeg_compression, {{"quality", 42}}).validate());
}

TEST_CASE("spec JSON round-trip is exact") {
  auto pool = PoolConfig::default_pool();
  for (std::uint64_t s = 0; s < 50; ++s) {
    auto spec = sample_pipeline(pool, s);
    auto j = spec.to_json();
    auto text = j.dump();
    auto back = DegradationSpec::from_json(nlohmann::json::parse(text));
    CHECK(spec == back);
  }
}

TEST_CASE("hom/inhom split partitions the spec") {
  auto pool = PoolConfig::default_pool();
  pool.arity_weights = {0, 0, 0, 1};  // always 4 stages
  for (std::uint64_t s = 0; s < 40; ++s) {
    auto spec = sample_pipeline(pool, s);
    auto hom = spec.homogeneous_part();
    auto inhom = spec.inhomogeneous_part();
    CHECK(hom.stages.size() + inhom.stages.size() == spec.stages.size());
    for (const auto& st : hom.stages) CHECK(!is_inhomogeneous(st.kind));
    for (const auto& st : inhom.stages) CHECK(is_inhomogeneous(st.kind));
  }
}

TEST_CASE("homogeneous stages commute with horizontal flip statistically") {
  auto x = torch::full({3, 256, 256}, 0.5f);
  auto spec = single_stage(StageKind::gaussian_noise, {{"sigma", 0.2}});
  auto a = apply_degradation(x.flip(-1), spec, 11);
  auto b = apply_degradation(x, spec, 12).flip(-1);
  CHECK(std::abs(a.mean().item<double>() - b.mean().item<double>()) <
        0.01 * b.mean().item<double>());
  CHECK(std::abs(a.var().item<double>() - b.var().item<double>()) <
        0.01 * std::max(a.var().item<double>(), b.var().item<double>()) + 1e-6);
}

TEST_CASE("inhomogeneous noise is spatially non-constant vs homogeneous") {
  auto x = torch::full({3, 256, 256}, 0.5f);
  auto hom = apply_degradation(x, single_stage(StageKind::gaussian_noise, {{"sigma", 0.3}}), 21);
  auto inhom = apply_degradation(
      x,
      single_stage(StageKind::inhom_noise_field, {{"sigma_max", 0.3}, {"grid", 4}}, 777),
      21);
  auto v_hom = tile_statistic_variance(x, hom, /*use_std=*/true);
  auto v_inhom = tile_statistic_variance(x, inhom, /*use_std=*/true);
  CHECK(v_inhom >= 5.0 * v_hom);
}

TEST_CASE("occlusion is spatially non-constant vs color shift") {
  auto x = torch::full({3, 256, 256}, 0.5f);
  auto hom = apply_degradation(x,
                               single_stage(StageKind::color_shift, {{"gain_r", 1.2},
                                                                     {"gain_g", 1.1},
                                                                     {"gain_b", 0.9},
                                                                     {"offset_r", 0.05},
                                                                     {"offset_g", -0.05},
                                                                     {"offset_b", 0.0}}),
                               21);
  auto inhom = apply_degradation(
      x, single_stage(StageKind::local_occlusion, {{"count", 2}, {"strength", 0.9}}, 555), 21);
  auto v_hom = tile_statistic_variance(x, hom, /*use_std=*/false);
  auto v_inhom = tile_statistic_variance(x, inhom, /*use_std=*/false);
  CHECK(v_inhom >= 5.0 * v_hom);
  CHECK(v_inhom > 1e-8);
}

TEST_CASE("blur field is spatially non-constant vs uniform blur on texture") {
  auto x = checkerboard(256, 4);
  auto hom = apply_degradation(x, single_stage(StageKind::gaussian_blur, {{"sigma", 2.0}}), 21);
  auto inhom = apply_degradation(
      x, single_stage(StageKind::inhom_blur_field, {{"sigma_max", 4.0}, {"grid", 3}}, 333), 21);
  auto v_hom = tile_statistic_variance(x, hom, /*use_std=*/false);
  auto v_inhom = tile_statistic_variance(x, inhom, /*use_std=*/false);
  CHECK(v_inhom >= 5.0 * v_hom);
}

TEST_CASE("field layout follows field_seed, not apply seed") {
  auto x = torch::full({3, 64, 64}, 0.5f);
  auto spec = single_stage(StageKind::local_occlusion, {{"count", 1}, {"strength", 1.0}}, 42);
  auto a = apply_degradation(x, spec, 1);
  auto b = apply_degradation(x, spec, 2);
  CHECK(a.equal(b));  // occlusion draws nothing from the apply seed

  auto spec2 = single_stage(StageKind::local_occlusion, {{"count", 1}, {"strength", 1.0}}, 43);
  auto c = apply_degradation(x, spec2, 1);
  CHECK(!a.equal(c));
}

TEST_CASE("noise field: same layout, fresh noise across applies") {
  auto x = torch::full({3, 64, 64}, 0.5f);
  auto spec =
      single_stage(StageKind::inhom_noise_field, {{"sigma_max", 0.4}, {"grid", 4}}, 1234);
  auto a = apply_degradation(x, spec, 1);
  auto b = apply_degradation(x, spec, 2);
  CHECK(!a.equal(b));
  // Per-pixel envelope is shared: variance maps agree between the two draws.
  auto field = smooth_field(4, mix_seed(1234, 6), 64, 64);
  auto corr_a = ((a - x).abs().mean(0) * field[0][0]).mean().item<double>();
  CHECK(corr_a > 0.0);
}

TEST_CASE("motion blur keeps a constant image constant") {
  auto x = torch::full({3, 48, 48}, 0.37f);
  auto y = apply_degradation(
      x, single_stage(StageKind::motion_blur, {{"length", 15}, {"angle", 30.0}}), 3);
  CHECK((y - x).abs().max().item<float>() < 1e-5f);
}

TEST_CASE("motion blur streaks along its angle") {
  // A horizontal streak should smear a single bright column much more than a
  // single bright row.
  auto x = torch::zeros({3, 64, 64});
  x.index_put_({torch::indexing::Slice(), torch::indexing::Slice(), 32}, 1.0f);
  auto spec = single_stage(StageKind::motion_blur, {{"length", 21}, {"angle", 0.0}});
  auto y = apply_degradation(x, spec, 3);
  auto col_peak = y.index({0, 32, 32}).item<float>();
  CHECK(col_peak < 0.2f);  // energy spread over ~21 columns

  auto xr = torch::zeros({3, 64, 64});
  xr.index_put_({torch::indexing::Slice(), 32, torch::indexing::Slice()}, 1.0f);
  auto yr = apply_degradation(xr, spec, 3);
  CHECK(yr.index({0, 32, 32}).item<float>() > 0.9f);  // row survives horizontal smear
}

TEST_CASE("down-up resample smooths texture but preserves constants") {
  auto c = torch::full({3, 64, 64}, 0.6f);
  auto yc = apply_degradation(c, single_stage(StageKind::down_up_resample, {{"factor", 3.0}}), 1);
  CHECK((yc - c).abs().max().item<float>() < 1e-5f);

  auto x = checkerboard(64, 1);
  auto y = apply_degradation(x, single_stage(StageKind::down_up_resample, {{"factor", 3.0}}), 1);
  CHECK((y - x).abs().mean().item<float>() > 0.1f);
}

TEST_CASE("color shift applies per-channel affine") {
  auto x = torch::full({3, 32, 32}, 0.5f);
  auto y = apply_degradation(x,
                             single_stage(StageKind::color_shift, {{"gain_r", 1.2},
                                                                   {"gain_g", 1.0},
                                                                   {"gain_b", 0.8},
                                                                   {"offset_r", 0.1},
                                                                   {"offset_g", 0.0},
                                                                   {"offset_b", -0.1}}),
                             1);
  CHECK(y[0][0][0].item<float>() == doctest::Approx(0.7f));
  CHECK(y[1][0][0].item<float>() == doctest::Approx(0.5f));
  CHECK(y[2][0][0].item<float>() == doctest::Approx(0.3f));
}

TEST_CASE("film grain adds luminance-modulated monochrome noise") {
  auto x = torch::full({3, 256, 256}, 0.5f);
  auto y = apply_degradation(x, single_stage(StageKind::film_grain, {{"strength", 1.0}}), 5);
  auto resid = y - x;
  CHECK(std::abs(y.mean().item<double>() - 0.5) < 0.005);
  CHECK(resid.std().item<double>() == doctest::Approx(0.08).epsilon(0.15));
  // Monochrome: all three channels carry the same grain.
  CHECK((resid[0] - resid[1]).abs().max().item<float>() < 1e-6f);

  // Near-black regions receive almost no grain.
  auto dark = torch::full({3, 256, 256}, 0.02f);
  auto yd = apply_degradation(dark, single_stage(StageKind::film_grain, {{"strength", 1.0}}), 5);
  CHECK((yd - dark).std().item<double>() < 0.02);
}

TEST_CASE("apply_degradation is differentiable through every kind") {
  auto pool = PoolConfig::default_pool();
  pool.kinds.push_back(StageKind::film_grain);
  pool.ranges[StageKind::film_grain] = default_ranges(StageKind::film_grain);
  for (auto kind : pool.kinds) {
    auto spec = sample_pipeline(PoolConfig::single(kind), 3);
    auto x = (0.25 + 0.5 * torch::rand({3, 32, 32}, make_generator(1))).requires_grad_(true);
    auto y = apply_degradation(x, spec, 9);
    y.sum().backward();
    REQUIRE(x.grad().defined());
    CHECK(torch::isfinite(x.grad()).all().item<bool>());
    CHECK(x.grad().abs().sum().item<double>() > 0.0);
  }
}

TEST_CASE("undersized inputs are rejected") {
  auto x = torch::rand({3, 31, 64});
  CHECK_THROWS_AS(
      apply_degradation(x, single_stage(StageKind::gaussian_noise, {{"sigma", 0.1}}), 1),
      SizeError);
}

TEST_CASE("batched apply matches shape and range") {
  auto x = torch::rand({2, 3, 32, 32}, make_generator(3));
  auto spec = single_stage(StageKind::gaussian_blur, {{"sigma", 1.5}});
  auto y = apply_degradation(x, spec, 1);
  CHECK(y.sizes() == x.sizes());
  CHECK(y.min().item<float>() >= 0.0f);
  CHECK(y.max().item<float>() <= 1.0f);
}

TEST_CASE("stage kind names round-trip") {
  for (int i = 0; i <= 9; ++i) {
    auto kind = static_cast<StageKind>(i);
    CHECK(stage_kind_from_string(to_string(kind)) == kind);
  }
  CHECK_THROWS_AS(stage_kind_from_string("sharpen"), ConfigError);
}
