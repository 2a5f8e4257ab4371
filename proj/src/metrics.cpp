#include "udm/metrics.hpp"

#include <cmath>
#include <numbers>

namespace udm {

namespace F = torch::nn::functional;

namespace {

constexpr double kC1 = 0.01 * 0.01;  // (K1 * L)^2, L = 1
constexpr double kC2 = 0.03 * 0.03;

torch::Tensor to_batch(const torch::Tensor& t, const char* who) {
  if (t.dim() == 3) return t.unsqueeze(0);
  if (t.dim() == 4) return t;
  throw ShapeError(std::string(who) + ": expected [C,H,W] or [B,C,H,W]");
}

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* who) {
  if (a.sizes() != b.sizes())
    throw ShapeError(std::string(who) + ": shape mismatch");
}

torch::Tensor gaussian_window(std::int64_t size, double sigma, const torch::TensorOptions& o) {
  auto xs = torch::arange(size, o) - (size - 1) / 2.0;
  auto g = torch::exp(-(xs * xs) / (2 * sigma * sigma));
  g = g / g.sum();
  return torch::mm(g.view({-1, 1}), g.view({1, -1}));
}

// Mean SSIM plus mean contrast-structure term at one scale. Valid windowing;
// inputs smaller than the window are reflect-padded up to it.
std::pair<torch::Tensor, torch::Tensor> ssim_cs(const torch::Tensor& a0,
                                                const torch::Tensor& b0) {
  constexpr std::int64_t win = 11;
  auto a = a0, b = b0;
  const auto h = a.size(-2), w = a.size(-1);
  if (h < win || w < win) {
    const auto ph = std::max<std::int64_t>(0, win - h);
    const auto pw = std::max<std::int64_t>(0, win - w);
    auto opts = F::PadFuncOptions({pw / 2, pw - pw / 2, ph / 2, ph - ph / 2})
                    .mode(torch::kReflect);
    a = F::pad(a, opts);
    b = F::pad(b, opts);
  }
  const auto c = a.size(1);
  auto kernel = gaussian_window(win, 1.5, a.options())
                    .view({1, 1, win, win})
                    .expand({c, 1, win, win});
  auto conv = [&](const torch::Tensor& t) {
    return F::conv2d(t, kernel, F::Conv2dFuncOptions().groups(c));
  };
  auto mu_a = conv(a);
  auto mu_b = conv(b);
  auto mu_aa = mu_a * mu_a, mu_bb = mu_b * mu_b, mu_ab = mu_a * mu_b;
  auto sigma_aa = conv(a * a) - mu_aa;
  auto sigma_bb = conv(b * b) - mu_bb;
  auto sigma_ab = conv(a * b) - mu_ab;

  auto cs_map = (2 * sigma_ab + kC2) / (sigma_aa + sigma_bb + kC2);
  auto ssim_map = ((2 * mu_ab + kC1) / (mu_aa + mu_bb + kC1)) * cs_map;
  return {ssim_map.mean(), cs_map.mean()};
}

}  // namespace

torch::Tensor ssim(const torch::Tensor& a_in, const torch::Tensor& b_in) {
  auto a = to_batch(a_in, "ssim");
  auto b = to_batch(b_in, "ssim");
  check_same_shape(a, b, "ssim");
  if (a.size(-2) < 32 || a.size(-1) < 32) throw SizeError("ssim: inputs below 32x32");
  return ssim_cs(a, b).first;
}

double ssim(const Image& a, const Image& b) {
  torch::NoGradGuard ng;
  return ssim(a.tensor(), b.tensor()).item<double>();
}

torch::Tensor ms_ssim(const torch::Tensor& a_in, const torch::Tensor& b_in) {
  auto a = to_batch(a_in, "ms_ssim");
  auto b = to_batch(b_in, "ms_ssim");
  check_same_shape(a, b, "ms_ssim");
  if (a.size(-2) < 32 || a.size(-1) < 32) throw SizeError("ms_ssim: inputs below 32x32");

  static const double kWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  const auto mindim = std::min(a.size(-2), a.size(-1));
  int scales = 1;
  while (scales < 5 && mindim / (1LL << scales) >= 10) ++scales;
  double wsum = 0;
  for (int s = 0; s < scales; ++s) wsum += kWeights[s];

  auto result = torch::ones({}, a.options());
  for (int s = 0; s < scales; ++s) {
    auto [ssim_s, cs_s] = ssim_cs(a, b);
    const double w = kWeights[s] / wsum;
    // Last scale contributes full SSIM, earlier ones contrast-structure only.
    auto term = (s == scales - 1 ? ssim_s : cs_s).clamp_min(1e-6);
    result = result * term.pow(w);
    if (s + 1 < scales) {
      a = F::avg_pool2d(a, F::AvgPool2dFuncOptions(2));
      b = F::avg_pool2d(b, F::AvgPool2dFuncOptions(2));
    }
  }
  return result;
}

double ms_ssim(const Image& a, const Image& b) {
  torch::NoGradGuard ng;
  return ms_ssim(a.tensor(), b.tensor()).item<double>();
}

double psnr(const torch::Tensor& a, const torch::Tensor& b) {
  check_same_shape(a, b, "psnr");
  auto mse = (a - b).pow(2).mean().item<double>();
  return 10.0 * std::log10(1.0 / std::max(mse, 1e-12));
}

double psnr(const Image& a, const Image& b) { return psnr(a.tensor(), b.tensor()); }

PerceptualPyramid::PerceptualPyramid(std::uint64_t seed) {
  const std::int64_t widths[4] = {3, 16, 24, 32};
  for (int s = 0; s < 3; ++s) {
    auto gen = make_generator(mix_seed(seed, static_cast<std::uint64_t>(s)));
    const auto fan_in = widths[s] * 9;
    auto w = torch::randn({widths[s + 1], widths[s], 3, 3}, gen, torch::kFloat32) *
             std::sqrt(2.0 / fan_in);
    // Odd channels are made high-pass (zero DC gain): they respond to fine
    // detail and noise rather than smooth content, giving the texture terms a
    // strong shared signature for any two realizations of the same noise.
    for (std::int64_t c = 1; c < widths[s + 1]; c += 2)
      w[c] -= w[c].mean();
    w.set_requires_grad(false);
    kernels_.push_back(w);
  }
}

std::vector<torch::Tensor> PerceptualPyramid::features(const torch::Tensor& x) const {
  std::vector<torch::Tensor> out;
  auto t = x;
  for (const auto& k : kernels_) {
    t = F::conv2d(F::pad(t, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReflect)),
                  k.to(t.dtype()));
    // Sharp but smooth rectifier, shifted so that a zero pre-activation maps
    // to zero. Rectification turns zero-mean noise into a mean shift shared
    // by any two realizations of the same noise level, which the texture
    // terms then treat as matching; without the shift the constant
    // softplus(0) offset would swamp that signal in the channel means.
    t = (torch::softplus(4.0 * t) - std::numbers::ln2) / 4.0;
    out.push_back(t);
    t = F::avg_pool2d(t, F::AvgPool2dFuncOptions(2));
  }
  return out;
}

torch::Tensor PerceptualPyramid::distance(const torch::Tensor& a_in,
                                          const torch::Tensor& b_in) const {
  auto a = to_batch(a_in, "d_perc");
  auto b = to_batch(b_in, "d_perc");
  check_same_shape(a, b, "d_perc");

  auto fa = features(a);
  auto fb = features(b);
  constexpr double c = 1e-6;
  // Texture terms carry almost all the weight. Correlation-based structure
  // terms inherently prefer a pair that shares one noise realization over a
  // pair with two independent realizations (the latter carries twice the
  // uncorrelated variance), so any sizeable structure weight would make the
  // distance track the noise's random state. The structure terms are kept at
  // a small weight for their sensitivity to spatial rearrangement.
  constexpr double alpha = 0.97, beta = 0.03;

  torch::Tensor acc;
  std::int64_t channels = 0;
  for (std::size_t s = 0; s < fa.size(); ++s) {
    auto u = fa[s].flatten(2);  // [B,C,HW]
    auto v = fb[s].flatten(2);
    auto mu_u = u.mean(-1);
    auto mu_v = v.mean(-1);
    auto var_u = u.var(-1, /*unbiased=*/false);
    auto var_v = v.var(-1, /*unbiased=*/false);
    auto cov = (u * v).mean(-1) - mu_u * mu_v;

    auto texture = (2 * mu_u * mu_v + c) / (mu_u.pow(2) + mu_v.pow(2) + c);
    auto structure = (2 * cov + c) / (var_u + var_v + c);
    auto score = (alpha * texture + beta * structure).sum(-1).mean();  // sum channels, mean batch
    acc = acc.defined() ? acc + score : score;
    channels += fa[s].size(1);
  }
  return 1.0 - acc / static_cast<double>(channels);
}

torch::Tensor d_perc(const torch::Tensor& a, const torch::Tensor& b) {
  static const PerceptualPyramid pyramid;
  return pyramid.distance(a, b);
}

double d_perc(const Image& a, const Image& b) {
  torch::NoGradGuard ng;
  return d_perc(a.tensor(), b.tensor()).item<double>();
}

}  // namespace udm
