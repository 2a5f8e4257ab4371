#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "udm/dataset.hpp"
#include "udm/encoders.hpp"
#include "udm/entropy.hpp"
#include "udm/losses.hpp"
#include "udm/synthesis.hpp"

namespace udm {

struct TrainConfig {
  std::string manifest_dir;  // dataset root containing manifest.json
  std::string out_dir;       // checkpoints and the metrics CSV land here

  int steps = 2000;
  int batch = 2;
  int crop = 128;  // must be divisible by the encoder stride and 2^(unet depth)

  double lr_main = 2e-4;     // encoders + combiner + synthesis
  double lr_dis = 1e-4;      // discriminator
  double lr_density = 1e-3;  // factorized densities

  LossWeights weights;
  EncoderConfig enc;
  SynthConfig synth;
  bool use_ida = true;
  bool use_iden = true;

  std::uint64_t seed = 1;
  int checkpoint_every = 500;

  // Resume continues an interrupted run: the config, including the step
  // horizon the lr schedule anneals over, must match the checkpoint's, and
  // optimizer state is restored, so the result equals the uninterrupted run.
  // Finetune starts a fresh run from another checkpoint's weights; only the
  // architecture fields must match.
  std::string resume_from;
  std::string finetune_from;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// Everything the optimizer touches, bundled for checkpointing.
struct TrainSystem {
  std::shared_ptr<DegradationModel> model;
  std::shared_ptr<PatchDiscriminator> dis;
  std::shared_ptr<FactorizedDensity> density_g, density_l;

  // Deterministic construction: module initializers draw from a stream fixed
  // by the config seed.
  static TrainSystem build(const TrainConfig& cfg);
};

// Single-file binary container: magic, JSON header (config snapshot, step,
// tensor directory), raw little-endian tensor payloads, opaque named blobs
// (optimizer states). load(save(...)) restores forward outputs bit-exactly.
struct CheckpointData {
  TrainConfig config;
  int step = 0;
  TrainSystem system;
  std::map<std::string, std::string> blobs;
};

void save_checkpoint(const std::string& path, const TrainSystem& system,
                     const TrainConfig& config, int step,
                     const std::map<std::string, std::string>& blobs = {});
CheckpointData load_checkpoint(const std::string& path);

struct TrainResult {
  std::string checkpoint_path;
  std::string csv_path;
  int steps_done = 0;
};

// Runs the full loop: per step, embeddings of the degraded crop condition two
// synthesis passes under different noise states; the similarity, rate,
// contrastive, color, diversity, and adversarial terms are combined by the
// configured weights. A non-finite loss aborts with DivergenceError after
// writing <out_dir>/last_good.ckpt. Metrics stream to <out_dir>/metrics.csv.
TrainResult train(const TrainConfig& cfg);

// train() with cfg.finetune_from = base_checkpoint.
TrainResult finetune(TrainConfig cfg, const std::string& base_checkpoint);

struct MetricsRecord {
  std::string task;  // reproduce | transfer | direct | global-only | mixed
  double ms_ssim = 0;
  double ssim = 0;
  double d_perc = 0;
};

// Produces the degraded estimate for (pristine x, degraded reference y_ref);
// item_seed fixes any noise draw. Both tensors are [3,H,W].
using TransferFn =
    std::function<torch::Tensor(const torch::Tensor& x, const torch::Tensor& y_ref,
                                std::uint64_t item_seed)>;

// Wraps a model: encode y_ref, combine, synthesize on x with a seeded noise
// state, without building autograd graphs.
TransferFn make_transfer_fn(DegradationModel& model, std::uint64_t seed);

// Reproduction: embeddings from y0 re-degrade x0, scored against y0.
std::vector<MetricsRecord> evaluate_reproduction(const DatasetManifest& manifest,
                                                 const TransferFn& fn);
// Transfer: embeddings from y1 degrade x0, scored against y0.
std::vector<MetricsRecord> evaluate_transfer(const DatasetManifest& manifest,
                                             const TransferFn& fn);

// Quadruplet scores: direct (both embeddings from y1, vs y0), global-only
// (global embedding from y2, local zeroed, vs gt_global), mixed (global from
// y1, local from y3, vs gt_mixed).
std::vector<MetricsRecord> evaluate_ablation_transfers(const DatasetManifest& manifest,
                                                       DegradationModel& model,
                                                       std::uint64_t seed);

// mean / median / stddev per metric per task, schema-versioned.
nlohmann::json summarize(const std::vector<MetricsRecord>& records);

struct ProbeReport {
  double kind_accuracy = 0;
  double content_accuracy = 0;
  double kind_chance = 0;
  double content_chance = 0;
  int kinds = 0;
  int content_classes = 0;
};

// Fits two linear probes on e_g over the manifest's pairs: (a) predict the
// degradation kind, (b) predict the source image. High (a) with near-chance
// (b) indicates content-free degradation embeddings. Needs >= 2 content
// classes.
ProbeReport probe_disentanglement(const DatasetManifest& manifest, Hden& encoder,
                                  std::uint64_t seed);

}  // namespace udm
