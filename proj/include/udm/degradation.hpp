#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "udm/common.hpp"
#include "udm/image.hpp"

namespace udm {

// The synthetic degradation pool. Nine kinds cover homogeneous (whole-image)
// and inhomogeneous (spatially varying) corruptions; film-grain is an extra
// held-out kind used only by finetuning flows, never in default pools.
enum class StageKind : int {
  gaussian_noise = 0,
  gaussian_blur = 1,
  motion_blur = 2,
  jpeg_compression = 3,
  down_up_resample = 4,
  color_shift = 5,
  inhom_noise_field = 6,
  inhom_blur_field = 7,
  local_occlusion = 8,
  film_grain = 9,
};

const char* to_string(StageKind kind);
StageKind stage_kind_from_string(const std::string& name);

// Spatially varying kinds carry a field-seed that fixes their spatial layout.
bool is_inhomogeneous(StageKind kind);

// Canonical pipeline position: color transform, blur family, resampling,
// noise family, compression, occlusion. Mirrors a camera-to-file pipeline and
// makes independently sampled specs comparable.
int stage_rank(StageKind kind);

struct StageSpec {
  StageKind kind = StageKind::gaussian_noise;
  std::map<std::string, double> params;
  std::uint64_t field_seed = 0;

  bool operator==(const StageSpec&) const = default;
};

struct DegradationSpec {
  std::vector<StageSpec> stages;

  bool operator==(const DegradationSpec&) const = default;

  // Throws ConfigError on arity violations, unknown/missing/out-of-range
  // parameters.
  void validate() const;

  // Stages reordered into canonical pipeline order (stable within rank).
  DegradationSpec canonicalized() const;

  DegradationSpec homogeneous_part() const;
  DegradationSpec inhomogeneous_part() const;

  nlohmann::json to_json() const;
  static DegradationSpec from_json(const nlohmann::json& j);
};

struct ParamRange {
  double lo = 0;
  double hi = 0;
  bool integral = false;
};

struct PoolConfig {
  std::vector<StageKind> kinds;
  // Weight of arity k is arity_weights[k-1]; arities above kinds.size() are
  // never drawn.
  std::vector<double> arity_weights = {1, 1, 1, 1};
  std::map<StageKind, std::map<std::string, ParamRange>> ranges;

  // All nine standard kinds with their default parameter ranges.
  static PoolConfig default_pool();
  // Homogeneous kinds only / inhomogeneous kinds only.
  static PoolConfig homogeneous_pool();
  static PoolConfig inhomogeneous_pool();
  // Single-kind pool, default ranges.
  static PoolConfig single(StageKind kind);

  void validate() const;
};

// Default legal range for one parameter of one kind; used by PoolConfig
// construction and by DegradationSpec::validate.
const std::map<std::string, ParamRange>& default_ranges(StageKind kind);

// Draws a pipeline: arity from the weighted distribution, distinct kinds,
// canonical order, parameters uniform in their ranges, fresh field seeds.
// Deterministic in rng_seed.
DegradationSpec sample_pipeline(const PoolConfig& pool, std::uint64_t rng_seed);

// Applies every stage in order. Accepts [3,H,W] or [B,3,H,W] float tensors in
// [0,1]; output has the same shape, clamped to [0,1]. Deterministic given
// (x, spec, seed); differentiable w.r.t. x (rounding uses a straight-through
// gradient). The seed drives per-application randomness; spatial layouts come
// from each stage's field_seed and are reused across applications.
torch::Tensor apply_degradation(const torch::Tensor& x, const DegradationSpec& spec,
                                std::uint64_t seed);
Image apply_degradation(const Image& x, const DegradationSpec& spec, std::uint64_t seed);

// Smooth random field in (0,1) of shape [1,1,H,W] built from a seeded coarse
// grid; the layout a spatially varying stage reuses across applications.
torch::Tensor smooth_field(std::int64_t grid, std::uint64_t seed, std::int64_t h,
                           std::int64_t w);

}  // namespace udm
