#pragma once

#include <functional>
#include <optional>

#include "udm/common.hpp"

namespace udm {

struct LossWeights {
  double lambda_g_rate = 0.01;
  double lambda_l_rate = 0.01;
  double lambda_contra = 0.1;
  double lambda_color = 1.0;
  double lambda_diver = 0.1;
  double lambda_gan = 0.01;

  void validate() const;  // all weights non-negative
};

// -ssim(a, b): rewards outputs that differ across random states.
torch::Tensor diversity_loss(const torch::Tensor& a, const torch::Tensor& b);

// L1 between Gaussian-blurred inputs (sigma 3, 13x13 kernel): sees color
// casts, ignores texture and noise.
torch::Tensor color_loss(const torch::Tensor& a, const torch::Tensor& b);

// InfoNCE over cosine similarities. anchor/positive: [D] or [B,D];
// negatives: [N,D] or [B,N,D]. Natural log, temperature tau.
torch::Tensor contrastive_loss(const torch::Tensor& anchor, const torch::Tensor& positive,
                               const torch::Tensor& negatives, double tau = 0.1);

// Patch-level realness classifier: one logit per spatial patch.
class PatchDiscriminator : public torch::nn::Module {
 public:
  PatchDiscriminator();
  torch::Tensor forward(const torch::Tensor& x);
  // Zeroes the output layer so every logit is exactly 0 (neutral start).
  void zero_final_layer();

 private:
  torch::nn::Conv2d c1_{nullptr}, c2_{nullptr}, c3_{nullptr}, out_{nullptr};
};

struct GanLosses {
  torch::Tensor d_loss;  // softplus(-D(real)) + softplus(D(fake.detach()))
  torch::Tensor g_loss;  // softplus(-D(fake)), non-saturating
};

using DiscriminatorFn = std::function<torch::Tensor(const torch::Tensor&)>;
GanLosses gan_losses(const DiscriminatorFn& dis, const torch::Tensor& real,
                     const torch::Tensor& fake);
GanLosses gan_losses(PatchDiscriminator& dis, const torch::Tensor& real,
                     const torch::Tensor& fake);

// Per-batch loss terms. Similarity is always required; any other component
// may be absent only if its weight is zero.
struct LossComponents {
  torch::Tensor sim;
  std::optional<torch::Tensor> rate_g;
  std::optional<torch::Tensor> rate_l;
  std::optional<torch::Tensor> contra;
  std::optional<torch::Tensor> color;
  std::optional<torch::Tensor> diver;
  std::optional<torch::Tensor> gan_g;
};

// Raw (unweighted) component values for reporting, plus the weighted total
// with the full autograd graph.
struct LossBreakdown {
  torch::Tensor total;
  double sim = 0, rate_g = 0, rate_l = 0, contra = 0, color = 0, diver = 0, gan_g = 0;
};

LossBreakdown total_loss(const LossComponents& components, const LossWeights& weights);

}  // namespace udm
