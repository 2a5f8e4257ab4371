#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include <torch/torch.h>

#include "udm/common.hpp"
#include "udm/encoders.hpp"
#include "udm/image.hpp"

namespace udm {

struct SynthConfig {
  std::int64_t map_channels = 16;  // C_e, channels of the combined map
  std::int64_t base_width = 32;    // U-Net width at full resolution
  std::int64_t depth = 3;          // resolution levels (including bottleneck)
  Activation activation = Activation::silu;

  void validate() const;
};

// Deterministic per-site standard-normal draws. Each injection site gets its
// own generator stream derived from (seed, site), so draws are independent
// across sites and exactly regenerable from the seed alone.
class NoiseState {
 public:
  explicit NoiseState(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  // Standard normal grid for one injection site, spatially shaped to that
  // site's feature map: [B, 1, h, w].
  torch::Tensor draw(std::int64_t site, std::int64_t batch, std::int64_t h, std::int64_t w,
                     const torch::TensorOptions& opts) const;

 private:
  std::uint64_t seed_;
};

// Resamples a degradation map to the given spatial size: average pooling when
// shrinking, nearest-neighbor when enlarging.
torch::Tensor resample_map(const torch::Tensor& e, std::int64_t h, std::int64_t w);

// Modulation layer: DConv( DS(DConv(e')) (x) DS(F_in) ) where e' is the map
// average-pooled one level down, DS is a stride-2 convolution, DConv a
// stride-2 transposed convolution, and (x) the elementwise product. Every
// convolution on this path is bias-free, so a zero map annihilates the output
// exactly, and the layer is linear in F_in for a fixed map.
class IdaLayer : public torch::nn::Module {
 public:
  // hidden is the width of the modulated product; 0 means use `channels`.
  // Expressing rich per-position kernels needs hidden well above `channels`.
  IdaLayer(std::int64_t channels, std::int64_t map_channels, std::int64_t hidden = 0);

  // f: [B, C, h, w], e: [B, C_e, h, w] (same spatial dims) -> [B, C, h, w].
  torch::Tensor forward(const torch::Tensor& f, const torch::Tensor& e);

 private:
  torch::nn::ConvTranspose2d up_e_{nullptr};  // DConv on the pooled map
  torch::nn::Conv2d down_e_{nullptr};         // DS on the modulation signal
  torch::nn::Conv2d down_f_{nullptr};         // DS on the feature path
  torch::nn::ConvTranspose2d out_{nullptr};   // DConv back to input resolution
};

// Affine conditioning: alpha(e) (x) F_in + beta(e, n). alpha and beta are
// per-position channel mappings (1x1 convolutions); beta sees the noise draw
// concatenated to the map. alpha starts at 1 and beta at 0, so an untrained
// block passes features through unchanged.
class SftLayer : public torch::nn::Module {
 public:
  SftLayer(std::int64_t channels, std::int64_t map_channels, std::int64_t site,
           Activation act);

  torch::Tensor forward(const torch::Tensor& f, const torch::Tensor& e,
                        const NoiseState* noise);

  std::int64_t site() const { return site_; }

  torch::nn::Conv2d alpha_hidden_{nullptr}, alpha_out_{nullptr};
  torch::nn::Conv2d beta_hidden_{nullptr}, beta_out_{nullptr};

 private:
  std::int64_t site_;
  Activation act_;
};

// Sum of the modulation and affine-conditioning branches; both see the same
// degradation map.
class IdaSftBlock : public torch::nn::Module {
 public:
  IdaSftBlock(std::int64_t channels, std::int64_t map_channels, std::int64_t site,
              Activation act, bool use_ida = true);

  torch::Tensor forward(const torch::Tensor& f, const torch::Tensor& e,
                        const NoiseState* noise);

  std::shared_ptr<IdaLayer> ida;  // null when the modulation branch is ablated
  std::shared_ptr<SftLayer> sft;
};

// Broadcasts the global embedding across the local grid, concatenates, and
// mixes with a single 1x1 convolution into a C_e-channel degradation map at
// the grid's resolution.
class EmbeddingCombiner : public torch::nn::Module {
 public:
  EmbeddingCombiner(std::int64_t d_g, std::int64_t c_l, std::int64_t map_channels);

  // e_g: [B, D_g], e_l: [B, C_l, gh, gw] -> [B, C_e, gh, gw].
  torch::Tensor forward(const torch::Tensor& e_g, const torch::Tensor& e_l);

  torch::nn::Conv2d mix_{nullptr};

 private:
  std::int64_t d_g_, c_l_;
};

// Conditioned degradation synthesizer: a 3-level U-Net whose decoder applies
// one IDA-SFT block per resolution level, each conditioned on the degradation
// map resampled to that level and on its own noise site. The network predicts
// a residual; the output is clamp(x + residual, 0, 1).
class SynthesisNet : public torch::nn::Module {
 public:
  explicit SynthesisNet(SynthConfig cfg = {}, bool use_ida = true);

  // x: [B, 3, H, W], e: [B, C_e, gh, gw] -> [B, 3, H, W].
  // Deterministic given (inputs, noise).
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& e,
                        const NoiseState* noise);

  const SynthConfig& config() const { return cfg_; }

 private:
  SynthConfig cfg_;
  torch::nn::Conv2d stem_{nullptr}, head_{nullptr};
  std::vector<torch::nn::Conv2d> enc_;                // one per level
  std::vector<torch::nn::Conv2d> down_;               // between levels
  std::vector<torch::nn::ConvTranspose2d> up_;        // decoder upsampling
  std::vector<torch::nn::Conv2d> mix_;                // post-skip-concat fusion
  std::vector<std::shared_ptr<IdaSftBlock>> blocks_;  // site 0 = bottleneck
};

// The full degradation model: encoders, combiner, and synthesizer, with
// ablation switches for the modulation branch and the spatial encoder.
class DegradationModel : public torch::nn::Module {
 public:
  DegradationModel(EncoderConfig enc_cfg = {}, SynthConfig synth_cfg = {},
                   bool use_ida = true, bool use_iden = true);

  // Extracts embeddings from the reference y. When the spatial encoder is
  // ablated the local grid is all zeros.
  torch::Tensor encode_global(const torch::Tensor& y);
  torch::Tensor encode_local(const torch::Tensor& y);

  // Applies y_ref's degradation to content x: synthesize(x, encode(y_ref)).
  torch::Tensor transfer(const torch::Tensor& x, const torch::Tensor& y_ref,
                         const NoiseState* noise);

  std::shared_ptr<Hden> hden;
  std::shared_ptr<Iden> iden;  // null when ablated
  std::shared_ptr<EmbeddingCombiner> combiner;
  std::shared_ptr<SynthesisNet> synth;

  const EncoderConfig& encoder_config() const { return enc_cfg_; }
  const SynthConfig& synth_config() const { return synth_cfg_; }
  bool use_ida() const { return use_ida_; }
  bool use_iden() const { return use_iden_; }

 private:
  EncoderConfig enc_cfg_;
  SynthConfig synth_cfg_;
  bool use_ida_ = true;
  bool use_iden_ = true;
};

// Image-level synthesis wrapper over batched tensors.
Image synthesize(const Image& x, const HomEmbedding& e_g, const InhomEmbedding& e_l,
                 const NoiseState& noise, EmbeddingCombiner& combiner, SynthesisNet& net);

}  // namespace udm
