#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "udm/degradation.hpp"
#include "udm/synthesis.hpp"

namespace udm {

// Differentiable image generator: latent vector -> square RGB image.
// forward must be deterministic given w and differentiable w.r.t. it.
class Generator {
 public:
  virtual ~Generator() = default;
  virtual std::int64_t latent_dim() const = 0;
  virtual std::int64_t output_size() const = 0;
  // [B, latent_dim] -> [B, 3, S, S] with values in [0, 1].
  virtual torch::Tensor forward(const torch::Tensor& w) = 0;
  // Approximate inverse used for latent warm starts; returns an undefined
  // tensor when the generator has none.
  virtual torch::Tensor encode(const torch::Tensor& image) {
    (void)image;
    return {};
  }
};

struct ToyGenConfig {
  std::int64_t latent_dim = 32;
  std::int64_t size = 64;  // output is size x size
  std::int64_t width = 16; // channel budget scale of encoder/decoder
  int steps = 400;
  int batch = 8;
  double lr = 1e-3;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static ToyGenConfig from_json(const nlohmann::json& j);
};

// Convolutional autoencoder over a narrow image domain. The decoder half is
// the pluggable generator; the encoder half supplies inversion warm starts.
class ToyGenerator : public torch::nn::Module, public Generator {
 public:
  explicit ToyGenerator(ToyGenConfig cfg = {});

  std::int64_t latent_dim() const override { return cfg_.latent_dim; }
  std::int64_t output_size() const override { return cfg_.size; }
  torch::Tensor forward(const torch::Tensor& w) override;
  torch::Tensor encode(const torch::Tensor& image) override;
  const ToyGenConfig& config() const { return cfg_; }

 private:
  ToyGenConfig cfg_;
  torch::nn::Linear fc_in_{nullptr}, fc_out_{nullptr};
  std::vector<torch::nn::Conv2d> up_convs_;
  std::vector<torch::nn::Conv2d> down_convs_;
  torch::nn::Conv2d head_{nullptr};
};

// Autoencoder training on pixel L1 plus the perceptual distance. Corpus
// entries are [3, size, size] tensors in [0, 1]; fewer than 200 is an input
// error, a non-finite loss is a divergence error. Deterministic in cfg.seed.
std::shared_ptr<ToyGenerator> train_toy_generator(const std::vector<torch::Tensor>& corpus,
                                                  const ToyGenConfig& cfg);

void save_toy_generator(const std::string& path, const ToyGenerator& gen);
std::shared_ptr<ToyGenerator> load_toy_generator(const std::string& path);

enum class LatentInit { encoder, zero, random };

struct RestoreConfig {
  int steps = 120;
  double lr_latent = 5e-2;
  double lr_embed = 5e-2;
  int mc_samples = 4;  // noise draws per objective evaluation in blind mode
  LatentInit init = LatentInit::encoder;
  torch::Tensor init_latent;    // explicit [1, latent_dim] start; overrides init
  double anchor_weight = 1e-3;  // L2 pull of the latent toward its start
  std::uint64_t seed = 1;

  void validate() const;
};

struct RestoreStep {
  double objective = 0;  // fit + anchor
  double fit = 0;        // perceptual distance term
  double anchor = 0;
};

// trace[0] is the state before any update; later entries are accepted steps.
struct RestoreReport {
  std::string mode;  // "nonblind" | "blind" | "naive"
  std::vector<RestoreStep> trace;
  int steps_requested = 0;
  int steps_taken = 0;

  double initial_objective() const { return trace.front().objective; }
  double final_objective() const { return trace.back().objective; }
};

struct RestoreResult {
  torch::Tensor image;   // [3, S, S] restored output G(w*)
  torch::Tensor latent;  // [1, latent_dim] final w
  torch::Tensor e_g;     // blind mode only: final [1, D_g]
  torch::Tensor e_l;     // blind mode only: final [1, C_l, h, w]
  RestoreReport report;

  // Per-step trace, final metrics, and embedding snapshots.
  nlohmann::json to_json() const;
};

// Known degradation: minimizes the perceptual distance between y and the
// spec applied to G(w), plus the latent anchor, by gradient descent with
// Armijo backtracking, so the accepted-step objective trace never increases.
// The spec's noise realization is drawn once from cfg.seed, which keeps the
// objective deterministic; with a zero-strength spec this is plain inversion.
// Content-replacing stages (local occlusion) have no usable surrogate and
// raise ConfigError.
RestoreResult restore_nonblind(const torch::Tensor& y, Generator& gen,
                               const DegradationSpec& known, const RestoreConfig& cfg);

// Unknown degradation: warm-starts (e_g, e_l) from the model's encoders on y,
// then jointly optimizes (w, e_g, e_l) with Adam (separate latent/embedding
// learning rates) on an mc_samples-draw Monte Carlo estimate of the expected
// perceptual distance between y and the re-degraded generator output. The
// model is read-only: gradients flow through it but its parameters keep no
// .grad state, so concurrent restorations may share one instance.
RestoreResult restore_blind(const torch::Tensor& y, Generator& gen,
                            DegradationModel& model, const RestoreConfig& cfg);

// Ablation baseline with the blind optimizer but no degradation model:
// min_w d_perc(y, G(w)) plus the anchor.
RestoreResult restore_naive(const torch::Tensor& y, Generator& gen,
                            const RestoreConfig& cfg);

// One Monte Carlo estimate of the blind fit term at fixed parameters, no
// gradients; `seed` selects the draw. Exposed for estimator diagnostics.
double blind_objective_sample(const torch::Tensor& y, const torch::Tensor& candidate,
                              const torch::Tensor& e_g, const torch::Tensor& e_l,
                              DegradationModel& model, int mc_samples,
                              std::uint64_t seed);

}  // namespace udm
