#include "udm/losses.hpp"

#include <cmath>

#include "udm/metrics.hpp"

namespace udm {

namespace F = torch::nn::functional;

void LossWeights::validate() const {
  for (double v : {lambda_g_rate, lambda_l_rate, lambda_contra, lambda_color, lambda_diver,
                   lambda_gan})
    if (v < 0) throw ConfigError("loss weights must be non-negative");
}

torch::Tensor diversity_loss(const torch::Tensor& a, const torch::Tensor& b) {
  return -ssim(a, b);
}

torch::Tensor color_loss(const torch::Tensor& a_in, const torch::Tensor& b_in) {
  auto a = a_in.dim() == 3 ? a_in.unsqueeze(0) : a_in;
  auto b = b_in.dim() == 3 ? b_in.unsqueeze(0) : b_in;
  if (a.sizes() != b.sizes()) throw ShapeError("color_loss: shape mismatch");

  constexpr std::int64_t size = 13;
  constexpr double sigma = 3.0;
  auto xs = torch::arange(size, a.options()) - (size - 1) / 2.0;
  auto k = torch::exp(-(xs * xs) / (2 * sigma * sigma));
  k = k / k.sum();

  const auto c = a.size(1);
  const auto r = (size - 1) / 2;
  auto blur = [&](torch::Tensor t) {
    t = F::pad(t, F::PadFuncOptions({r, r, r, r}).mode(torch::kReflect));
    t = F::conv2d(t, k.view({1, 1, 1, -1}).expand({c, 1, 1, size}),
                  F::Conv2dFuncOptions().groups(c));
    return F::conv2d(t, k.view({1, 1, -1, 1}).expand({c, 1, size, 1}),
                     F::Conv2dFuncOptions().groups(c));
  };
  return (blur(a) - blur(b)).abs().mean();
}

torch::Tensor contrastive_loss(const torch::Tensor& anchor_in, const torch::Tensor& positive_in,
                               const torch::Tensor& negatives_in, double tau) {
  auto anchor = anchor_in.dim() == 1 ? anchor_in.unsqueeze(0) : anchor_in;      // [B,D]
  auto positive = positive_in.dim() == 1 ? positive_in.unsqueeze(0) : positive_in;
  auto negatives = negatives_in.dim() == 2 ? negatives_in.unsqueeze(0) : negatives_in;  // [B,N,D]
  if (negatives.dim() != 3 || negatives.size(1) == 0)
    throw InputError("contrastive_loss: need at least one negative");
  if (anchor.sizes() != positive.sizes() || anchor.size(-1) != negatives.size(-1))
    throw ShapeError("contrastive_loss: embedding dims disagree");
  if (negatives.size(0) == 1 && anchor.size(0) > 1)
    negatives = negatives.expand({anchor.size(0), -1, -1});

  auto unit = [](const torch::Tensor& t) {
    return t / t.norm(2, -1, /*keepdim=*/true).clamp_min(1e-12);
  };
  auto a = unit(anchor);
  auto logit_pos = (a * unit(positive)).sum(-1) / tau;                       // [B]
  auto logit_neg = torch::bmm(unit(negatives), a.unsqueeze(-1)).squeeze(-1) / tau;  // [B,N]
  auto all_logits = torch::cat({logit_pos.unsqueeze(-1), logit_neg}, -1);
  return (torch::logsumexp(all_logits, -1) - logit_pos).mean();
}

PatchDiscriminator::PatchDiscriminator() {
  c1_ = register_module("c1", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, 32, 4)
                                                    .stride(2)
                                                    .padding(1)));
  c2_ = register_module("c2", torch::nn::Conv2d(torch::nn::Conv2dOptions(32, 64, 4)
                                                    .stride(2)
                                                    .padding(1)));
  c3_ = register_module("c3", torch::nn::Conv2d(torch::nn::Conv2dOptions(64, 64, 3)
                                                    .stride(1)
                                                    .padding(1)));
  out_ = register_module("out", torch::nn::Conv2d(torch::nn::Conv2dOptions(64, 1, 3)
                                                      .stride(1)
                                                      .padding(1)));
}

torch::Tensor PatchDiscriminator::forward(const torch::Tensor& x_in) {
  auto x = x_in.dim() == 3 ? x_in.unsqueeze(0) : x_in;
  x = torch::leaky_relu(c1_->forward(x), 0.2);
  x = torch::leaky_relu(c2_->forward(x), 0.2);
  x = torch::leaky_relu(c3_->forward(x), 0.2);
  return out_->forward(x);
}

void PatchDiscriminator::zero_final_layer() {
  torch::NoGradGuard ng;
  out_->weight.zero_();
  out_->bias.zero_();
}

GanLosses gan_losses(const DiscriminatorFn& dis, const torch::Tensor& real,
                     const torch::Tensor& fake) {
  if (real.numel() == 0 || fake.numel() == 0) throw InputError("gan_losses: empty batch");
  auto d_real = dis(real);
  auto d_fake_det = dis(fake.detach());
  auto d_loss = torch::softplus(-d_real).mean() + torch::softplus(d_fake_det).mean();
  auto d_fake = dis(fake);
  auto g_loss = torch::softplus(-d_fake).mean();
  return {d_loss, g_loss};
}

GanLosses gan_losses(PatchDiscriminator& dis, const torch::Tensor& real,
                     const torch::Tensor& fake) {
  return gan_losses([&dis](const torch::Tensor& t) { return dis.forward(t); }, real, fake);
}

LossBreakdown total_loss(const LossComponents& c, const LossWeights& w) {
  w.validate();
  if (!c.sim.defined()) throw ConfigError("total_loss: similarity component is required");

  LossBreakdown out;
  out.sim = c.sim.detach().item<double>();
  auto total = c.sim;

  auto fold = [&total](const std::optional<torch::Tensor>& t, double lambda, const char* name,
                       double& slot) {
    if (!t.has_value()) {
      if (lambda != 0)
        throw ConfigError(std::string("total_loss: component '") + name +
                          "' missing but its weight is non-zero");
      return;
    }
    slot = t->detach().item<double>();
    if (lambda != 0) total = total + lambda * *t;
  };
  fold(c.rate_g, w.lambda_g_rate, "rate_g", out.rate_g);
  fold(c.rate_l, w.lambda_l_rate, "rate_l", out.rate_l);
  fold(c.contra, w.lambda_contra, "contra", out.contra);
  fold(c.color, w.lambda_color, "color", out.color);
  fold(c.diver, w.lambda_diver, "diver", out.diver);
  fold(c.gan_g, w.lambda_gan, "gan_g", out.gan_g);
  out.total = total;
  return out;
}

}  // namespace udm
