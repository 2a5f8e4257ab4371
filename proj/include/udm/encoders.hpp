#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "udm/common.hpp"
#include "udm/image.hpp"

namespace udm {

enum class Activation : int { silu = 0, relu = 1 };

torch::Tensor apply_activation(const torch::Tensor& t, Activation a);

struct EncoderConfig {
  std::int64_t d_g = 16;         // global embedding length
  std::int64_t c_l = 8;          // local embedding channels
  std::int64_t stride = 8;       // local grid cell size, power of two
  std::int64_t long_range = 4;   // long-range branch downsample factor
  std::int64_t width = 24;       // conv width of both encoders
  Activation activation = Activation::silu;

  void validate() const;
  // Stride-2 stages in the spatial encoder's short branch: log2(stride).
  std::int64_t short_stages() const;
  // Stride-2 stages after the long branch's pooling; the long branch sits one
  // scale below the short branch (factor 2*stride overall).
  std::int64_t long_stages() const;
};

// Global (whole-image) degradation embedding.
struct HomEmbedding {
  torch::Tensor values;  // [B, D_g]
};

// Spatial degradation embedding grid; cell (i, j) covers the source pixel
// block [i*stride, (i+1)*stride) x [j*stride, (j+1)*stride).
struct InhomEmbedding {
  torch::Tensor values;  // [B, C_l, ceil(H/stride), ceil(W/stride)]
  std::int64_t stride = 8;
  std::int64_t src_h = 0;
  std::int64_t src_w = 0;

  void validate() const;
};

// Whole-image degradation encoder. Dual branch: a short-range branch at input
// scale and a long-range branch at 1/long_range scale; both are globally
// mean-pooled, concatenated, and fused by two fully-connected layers. The
// final layer is zero-initialized so an untrained encoder reports "no
// degradation".
class Hden : public torch::nn::Module {
 public:
  explicit Hden(EncoderConfig cfg = {});

  // y: [B, 3, H, W] -> [B, D_g]. Throws NumericError naming the offending
  // branch if activations stop being finite.
  torch::Tensor forward(const torch::Tensor& y);

  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  std::vector<torch::nn::Conv2d> short_convs_, long_convs_;
  torch::nn::Linear fuse1_{nullptr}, fuse2_{nullptr};
};

// Spatial degradation encoder. Short branch: stride-2 convolutions down to
// the stride-s grid. Long branch: pooled input, stride-2 convolutions one
// scale further down, nearest-upsampled back to the grid. Fused by two 3x3
// convolutions; final layer zero-initialized.
class Iden : public torch::nn::Module {
 public:
  explicit Iden(EncoderConfig cfg = {});

  // y: [B, 3, H, W] -> [B, C_l, ceil(H/s), ceil(W/s)].
  torch::Tensor forward(const torch::Tensor& y);

  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  std::vector<torch::nn::Conv2d> short_convs_, long_convs_;
  torch::nn::Conv2d fuse1_{nullptr}, fuse2_{nullptr};
};

HomEmbedding hden_forward(const Image& y, Hden& encoder);
InhomEmbedding iden_forward(const Image& y, Iden& encoder);

// Indices of embedding dimensions whose variance over the batch exceeds
// threshold times the largest dimension variance. Batch: [N, D], N >= 2.
// Warns on stderr and returns empty when every dimension is degenerate.
std::vector<std::int64_t> active_dimensions(const torch::Tensor& batch, double threshold);

}  // namespace udm
