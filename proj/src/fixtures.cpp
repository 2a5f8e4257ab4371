#include "udm/fixtures.hpp"

#include <cmath>
#include <filesystem>

#include "udm/degradation.hpp"

namespace udm {

namespace F = torch::nn::functional;
namespace fs = std::filesystem;

namespace {

// Sum of bilinearly upsampled seeded noise grids, one per octave.
torch::Tensor octave_noise(std::int64_t h, std::int64_t w, std::uint64_t seed, int octaves) {
  auto out = torch::zeros({1, 1, h, w});
  double amp = 1.0;
  for (int o = 0; o < octaves; ++o) {
    const std::int64_t cells = 4LL << o;
    auto gen = make_generator(mix_seed(seed, static_cast<std::uint64_t>(o)));
    auto grid = torch::randn({1, 1, cells, cells}, gen);
    out = out + amp * F::interpolate(grid, F::InterpolateFuncOptions()
                                               .size(std::vector<std::int64_t>{h, w})
                                               .mode(torch::kBilinear)
                                               .align_corners(true));
    amp *= 0.5;
  }
  return out;
}

}  // namespace

Image make_pristine_image(std::int64_t h, std::int64_t w, std::uint64_t seed) {
  SplitMix rng(mix_seed(seed, 0xF1C));

  auto ys = torch::linspace(0, 1, h).view({1, h, 1});
  auto xs = torch::linspace(0, 1, w).view({1, 1, w});
  const double theta = rng.uniform(0, 2 * M_PI);
  auto ramp = (xs * std::cos(theta) + ys * std::sin(theta));
  ramp = (ramp - ramp.min()) / (ramp.max() - ramp.min() + 1e-9);

  auto color_a = torch::tensor({static_cast<float>(rng.uniform(0.1, 0.9)),
                                static_cast<float>(rng.uniform(0.1, 0.9)),
                                static_cast<float>(rng.uniform(0.1, 0.9))})
                     .view({3, 1, 1});
  auto color_b = torch::tensor({static_cast<float>(rng.uniform(0.1, 0.9)),
                                static_cast<float>(rng.uniform(0.1, 0.9)),
                                static_cast<float>(rng.uniform(0.1, 0.9))})
                     .view({3, 1, 1});
  auto img = color_a * (1 - ramp) + color_b * ramp;

  auto tex = octave_noise(h, w, mix_seed(seed, 2), 4).squeeze(0);
  img = img + 0.12 * tex;

  // Fine-grained texture (4px cells) so windowed statistics see real local
  // variance, as natural images do.
  auto fine_gen = make_generator(mix_seed(seed, 3));
  auto fine = torch::randn({1, 1, std::max<std::int64_t>(2, h / 4),
                            std::max<std::int64_t>(2, w / 4)},
                           fine_gen);
  img = img + 0.1 * F::interpolate(fine, F::InterpolateFuncOptions()
                                             .size(std::vector<std::int64_t>{h, w})
                                             .mode(torch::kBilinear)
                                             .align_corners(true))
                        .squeeze(0);

  const int shapes = static_cast<int>(rng.uniform_int(2, 5));
  auto yy = torch::arange(h, torch::kFloat32).view({1, h, 1});
  auto xx = torch::arange(w, torch::kFloat32).view({1, 1, w});
  const double mindim = static_cast<double>(std::min(h, w));
  for (int i = 0; i < shapes; ++i) {
    const double cx = rng.uniform(0.1, 0.9) * w;
    const double cy = rng.uniform(0.1, 0.9) * h;
    const double ax = rng.uniform(0.08, 0.3) * mindim;
    const double ay = rng.uniform(0.08, 0.3) * mindim;
    const double phi = rng.uniform(0, M_PI);
    auto col = torch::tensor({static_cast<float>(rng.uniform(0.05, 0.95)),
                              static_cast<float>(rng.uniform(0.05, 0.95)),
                              static_cast<float>(rng.uniform(0.05, 0.95))})
                   .view({3, 1, 1});
    auto dx = xx - cx, dy = yy - cy;
    auto xr = dx * std::cos(phi) + dy * std::sin(phi);
    auto yr = -dx * std::sin(phi) + dy * std::cos(phi);
    auto q = (xr / ax).pow(2) + (yr / ay).pow(2);
    auto alpha = 0.85 * torch::sigmoid(4.0 * (1.0 - q));
    img = (1 - alpha) * img + alpha * col;
  }

  return Image(img.clamp(0, 1), "pristine:" + std::to_string(seed));
}

std::vector<std::string> write_pristine_corpus(const std::string& dir, int count,
                                               std::int64_t h, std::int64_t w,
                                               std::uint64_t seed) {
  fs::create_directories(dir);
  std::vector<std::string> paths;
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%03d.png", i);
    auto path = (fs::path(dir) / name).string();
    save_png(make_pristine_image(h, w, mix_seed(seed, static_cast<std::uint64_t>(i))), path);
    paths.push_back(path);
  }
  return paths;
}

torch::Tensor make_toy_image(std::uint64_t seed) {
  constexpr std::int64_t n = 64;
  SplitMix rng(mix_seed(seed, 0x70F));

  const auto bg = static_cast<float>(rng.uniform(0.08, 0.18));
  auto img = torch::full({3, n, n}, bg);

  auto yy = torch::arange(n, torch::kFloat32).view({1, n, 1});
  auto xx = torch::arange(n, torch::kFloat32).view({1, 1, n});
  const int blobs = static_cast<int>(rng.uniform_int(1, 3));
  for (int i = 0; i < blobs; ++i) {
    const double cx = rng.uniform(0.2, 0.8) * n;
    const double cy = rng.uniform(0.2, 0.8) * n;
    const double s = rng.uniform(4.0, 10.0);
    auto col = torch::tensor({static_cast<float>(rng.uniform(0.5, 1.0)),
                              static_cast<float>(rng.uniform(0.5, 1.0)),
                              static_cast<float>(rng.uniform(0.5, 1.0))})
                   .view({3, 1, 1});
    auto r2 = (xx - cx).pow(2) + (yy - cy).pow(2);
    auto bump = torch::exp(-r2 / (2 * s * s));
    img = img + col * bump;
  }
  return img.clamp(0, 1);
}

torch::Tensor make_toy_batch(int count, std::uint64_t seed) {
  std::vector<torch::Tensor> imgs;
  imgs.reserve(count);
  for (int i = 0; i < count; ++i)
    imgs.push_back(make_toy_image(mix_seed(seed, static_cast<std::uint64_t>(i))));
  return torch::stack(imgs);
}

}  // namespace udm
