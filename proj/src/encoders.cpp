#include "udm/encoders.hpp"

#include <cmath>
#include <iostream>

namespace udm {

namespace F = torch::nn::functional;

torch::Tensor apply_activation(const torch::Tensor& t, Activation a) {
  switch (a) {
    case Activation::silu: return torch::silu(t);
    case Activation::relu: return torch::relu(t);
  }
  throw ConfigError("unknown activation kind");
}

namespace {

bool power_of_two(std::int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

torch::nn::Conv2d make_conv(std::int64_t in, std::int64_t out, std::int64_t stride) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3)
                               .stride(stride)
                               .padding(1)
                               .padding_mode(torch::kReflect));
}

void zero_init(torch::nn::Conv2d& conv) {
  torch::NoGradGuard ng;
  conv->weight.zero_();
  conv->bias.zero_();
}

void zero_init(torch::nn::Linear& fc) {
  torch::NoGradGuard ng;
  fc->weight.zero_();
  fc->bias.zero_();
}

// Reflect-pad so the long branch's pooling window tiles the input exactly.
torch::Tensor pool_by(const torch::Tensor& t, std::int64_t factor) {
  auto padded = pad_to_multiple(t, factor);
  return F::avg_pool2d(padded.tensor, F::AvgPool2dFuncOptions(factor));
}

}  // namespace

void EncoderConfig::validate() const {
  if (d_g <= 0 || c_l <= 0 || width <= 0)
    throw ConfigError("EncoderConfig: embedding sizes and width must be positive");
  if (!power_of_two(stride))
    throw ConfigError("EncoderConfig: stride must be a power of two");
  if (long_range < 2 || !power_of_two(long_range))
    throw ConfigError("EncoderConfig: long_range must be a power of two >= 2");
  if (long_range > 2 * stride)
    throw ConfigError("EncoderConfig: long_range must not exceed 2*stride");
}

std::int64_t EncoderConfig::short_stages() const {
  return static_cast<std::int64_t>(std::llround(std::log2(static_cast<double>(stride))));
}

std::int64_t EncoderConfig::long_stages() const {
  const auto ratio = 2 * stride / long_range;
  return static_cast<std::int64_t>(std::llround(std::log2(static_cast<double>(ratio))));
}

void InhomEmbedding::validate() const {
  if (!values.defined() || values.dim() != 4)
    throw ShapeError("InhomEmbedding: values must be [B, C, h, w]");
  const auto gh = (src_h + stride - 1) / stride;
  const auto gw = (src_w + stride - 1) / stride;
  if (values.size(2) != gh || values.size(3) != gw)
    throw ShapeError("InhomEmbedding: grid " + std::to_string(values.size(2)) + "x" +
                     std::to_string(values.size(3)) + " does not cover a " +
                     std::to_string(src_h) + "x" + std::to_string(src_w) +
                     " image at stride " + std::to_string(stride));
}

Hden::Hden(EncoderConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  for (int i = 0; i < 3; ++i) {
    auto s = make_conv(i == 0 ? 3 : cfg_.width, cfg_.width, 1);
    auto l = make_conv(i == 0 ? 3 : cfg_.width, cfg_.width, 1);
    short_convs_.push_back(register_module("short_" + std::to_string(i), s));
    long_convs_.push_back(register_module("long_" + std::to_string(i), l));
  }
  fuse1_ = register_module("fuse1", torch::nn::Linear(2 * cfg_.width, cfg_.width));
  fuse2_ = register_module("fuse2", torch::nn::Linear(cfg_.width, cfg_.d_g));
  zero_init(fuse2_);
}

torch::Tensor Hden::forward(const torch::Tensor& y) {
  if (y.dim() != 4 || y.size(1) != 3)
    throw ShapeError("Hden: expected [B, 3, H, W] input");
  auto s = y;
  for (auto& conv : short_convs_) s = apply_activation(conv->forward(s), cfg_.activation);
  check_finite(s, "hden.short_branch");
  auto l = pool_by(y, cfg_.long_range);
  for (auto& conv : long_convs_) l = apply_activation(conv->forward(l), cfg_.activation);
  check_finite(l, "hden.long_branch");

  auto pooled = torch::cat({s.mean({2, 3}), l.mean({2, 3})}, 1);  // [B, 2W]
  auto h = apply_activation(fuse1_->forward(pooled), cfg_.activation);
  auto out = fuse2_->forward(h);
  check_finite(out, "hden.fuse");
  return out;
}

Iden::Iden(EncoderConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto ns = cfg_.short_stages();
  for (std::int64_t i = 0; i < ns; ++i) {
    auto c = make_conv(i == 0 ? 3 : cfg_.width, cfg_.width, 2);
    short_convs_.push_back(register_module("short_" + std::to_string(i), c));
  }
  const auto nl = cfg_.long_stages();
  for (std::int64_t i = 0; i < nl; ++i) {
    auto c = make_conv(i == 0 ? 3 : cfg_.width, cfg_.width, 2);
    long_convs_.push_back(register_module("long_" + std::to_string(i), c));
  }
  fuse1_ = register_module("fuse1", make_conv(2 * cfg_.width, cfg_.width, 1));
  fuse2_ = register_module("fuse2", make_conv(cfg_.width, cfg_.c_l, 1));
  zero_init(fuse2_);
}

torch::Tensor Iden::forward(const torch::Tensor& y) {
  if (y.dim() != 4 || y.size(1) != 3)
    throw ShapeError("Iden: expected [B, 3, H, W] input");
  auto s = y;
  for (auto& conv : short_convs_) s = apply_activation(conv->forward(s), cfg_.activation);
  check_finite(s, "iden.short_branch");

  auto l = pool_by(y, cfg_.long_range);
  for (auto& conv : long_convs_) l = apply_activation(conv->forward(l), cfg_.activation);
  l = F::interpolate(l, F::InterpolateFuncOptions()
                            .scale_factor(std::vector<double>{2.0, 2.0})
                            .mode(torch::kNearest));
  if (l.size(2) < s.size(2) || l.size(3) < s.size(3))
    l = F::pad(l, F::PadFuncOptions({0, s.size(3) - l.size(3), 0, s.size(2) - l.size(2)})
                      .mode(torch::kReplicate));
  l = crop_to(l, s.size(2), s.size(3));
  check_finite(l, "iden.long_branch");

  auto h = apply_activation(fuse1_->forward(torch::cat({s, l}, 1)), cfg_.activation);
  auto out = fuse2_->forward(h);
  check_finite(out, "iden.fuse");
  return out;
}

HomEmbedding hden_forward(const Image& y, Hden& encoder) {
  return HomEmbedding{encoder.forward(y.tensor().unsqueeze(0))};
}

InhomEmbedding iden_forward(const Image& y, Iden& encoder) {
  InhomEmbedding e;
  e.values = encoder.forward(y.tensor().unsqueeze(0));
  e.stride = encoder.config().stride;
  e.src_h = y.height();
  e.src_w = y.width();
  e.validate();
  return e;
}

std::vector<std::int64_t> active_dimensions(const torch::Tensor& batch, double threshold) {
  if (batch.dim() != 2) throw ShapeError("active_dimensions: expected [N, D] batch");
  if (batch.size(0) == 0) throw InputError("active_dimensions: empty batch");
  if (batch.size(0) < 2)
    throw InputError("active_dimensions: need at least 2 embeddings for a variance");
  auto var = batch.to(torch::kFloat64).var(0, /*unbiased=*/true);
  const double max_var = var.max().item<double>();
  std::vector<std::int64_t> active;
  if (max_var <= 0) {
    std::cerr << "warning: active_dimensions: all dimensions degenerate (zero variance)\n";
    return active;
  }
  auto acc = var.accessor<double, 1>();
  for (std::int64_t i = 0; i < var.size(0); ++i)
    if (acc[i] > threshold * max_var) active.push_back(i);
  return active;
}

}  // namespace udm
