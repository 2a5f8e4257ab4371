#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "udm/common.hpp"

namespace udm {

struct DensityConfig {
  std::int64_t channels = 16;
  // Number of stacked monotone stages in the CDF chain and their hidden
  // width. The last stage always maps to one logit per channel.
  std::int64_t stages = 4;
  std::int64_t hidden = 3;

  void validate() const;
};

struct FitOptions {
  std::int64_t steps = 1500;
  std::int64_t batch = 16384;
  double lr = 5e-3;
  std::uint64_t seed = 1;
};

// Per-channel factorized density, modeled through a monotone CDF: a chain of
// affine maps with positivity-constrained scales and bounded tanh gates,
// closed by a sigmoid. Code length for a value v is the interval mass
// CDF(v+1/2) - CDF(v-1/2) in bits; during training v is perturbed with
// additive U(-1/2,1/2) noise so the count stays differentiable.
class FactorizedDensity : public torch::nn::Module {
 public:
  explicit FactorizedDensity(DensityConfig cfg = {}, std::uint64_t seed = 0xD3451771);

  std::int64_t channels() const { return cfg_.channels; }
  const DensityConfig& config() const { return cfg_; }

  // values: [C, N] -> CDF values in [0,1], non-decreasing along N for sorted
  // inputs by construction.
  torch::Tensor cdf(const torch::Tensor& values) const;

  // Per-element code length in bits, -log2 of the unit interval mass around
  // each value. If noise_gen is non-null the values are first perturbed with
  // U(-1/2,1/2) noise drawn from it (training relaxation).
  torch::Tensor bits(const torch::Tensor& values,
                     torch::Generator* noise_gen = nullptr) const;

  // Maximum-likelihood fit on samples shaped [C, N] (Adam on the chain's
  // parameters, noisy-relaxation objective). Single-writer.
  void fit(const torch::Tensor& samples, const FitOptions& opts = {});

 private:
  torch::Tensor values_to_cn(const torch::Tensor& values) const;

  DensityConfig cfg_;
  std::vector<torch::Tensor> raw_scale_;  // [C, out, in], positive via softplus
  std::vector<torch::Tensor> shift_;      // [C, out, 1]
  std::vector<torch::Tensor> gate_;       // [C, out, 1], bounded via tanh
};

// Mean over the batch of the summed per-dimension code length of global
// embeddings e_g: [B, D]. Differentiable in both the embeddings and the
// density parameters.
torch::Tensor rate_loss_global(const torch::Tensor& e_g, const FactorizedDensity& density,
                               torch::Generator* noise_gen = nullptr);

// Same for local embedding grids e_l: [B, C, h, w]; each channel's density is
// shared across spatial positions, and the sum runs over channels and
// positions.
torch::Tensor rate_loss_local(const torch::Tensor& e_l, const FactorizedDensity& density,
                              torch::Generator* noise_gen = nullptr);

struct TotalCorrelation {
  double sum_marginal_entropy = 0;  // sum_i H(e_i), bits
  double joint_entropy = 0;         // H(e), bits
  double kl_to_product = 0;         // D_KL(p || prod_i p_i), bits
};

// Exhaustive-counting estimate of the entropy decomposition
// sum_i H(e_i) = H(e) + KL(p || prod p_i) for small discrete batches.
// samples: integer tensor [N, D], D <= 4, at most 8 distinct values per
// dimension (else CapacityError). All three terms are counted independently
// so the identity itself is checkable.
TotalCorrelation total_correlation_oracle(const torch::Tensor& samples);

}  // namespace udm
