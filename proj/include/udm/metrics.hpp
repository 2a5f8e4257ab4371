#pragma once

#include "udm/common.hpp"
#include "udm/image.hpp"

namespace udm {

// Windowed structural similarity, 11x11 Gaussian window (sigma 1.5), K1=0.01,
// K2=0.03, dynamic range 1. Accepts [3,H,W] or [B,3,H,W]; returns a scalar
// tensor (mean over batch). Inputs must be >= 32x32 and same-shaped.
torch::Tensor ssim(const torch::Tensor& a, const torch::Tensor& b);
double ssim(const Image& a, const Image& b);

// Multi-scale SSIM. Uses the standard five scale weights, renormalized when
// the image is too small for all five scales (a scale is kept while
// min(H,W)/2^(scale-1) >= 10).
torch::Tensor ms_ssim(const torch::Tensor& a, const torch::Tensor& b);
double ms_ssim(const Image& a, const Image& b);

double psnr(const torch::Tensor& a, const torch::Tensor& b);
double psnr(const Image& a, const Image& b);

// Perceptual distance over a fixed random-weight convolutional pyramid.
// Texture terms compare per-channel means, structure terms normalized
// covariances, as in the DISTS construction; weights are seeded so the
// measure is bit-reproducible. Differentiable w.r.t. both inputs; symmetric;
// zero on identical inputs.
class PerceptualPyramid {
 public:
  explicit PerceptualPyramid(std::uint64_t seed = kDefaultSeed);

  torch::Tensor distance(const torch::Tensor& a, const torch::Tensor& b) const;

  static constexpr std::uint64_t kDefaultSeed = 0xD157D157ULL;

 private:
  std::vector<torch::Tensor> features(const torch::Tensor& x) const;
  std::vector<torch::Tensor> kernels_;
};

// distance() through a process-wide default pyramid.
torch::Tensor d_perc(const torch::Tensor& a, const torch::Tensor& b);
double d_perc(const Image& a, const Image& b);

}  // namespace udm
