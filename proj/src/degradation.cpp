#include "udm/degradation.hpp"

#include <algorithm>
#include <cmath>

namespace udm {

namespace F = torch::nn::functional;

namespace {

struct KindInfo {
  StageKind kind;
  const char* name;
  bool inhom;
  int rank;
};

// Rank order: color transform, blur family, resampling, noise family,
// compression, occlusion.
constexpr KindInfo kKinds[] = {
    {StageKind::gaussian_noise, "gaussian-noise", false, 3},
    {StageKind::gaussian_blur, "gaussian-blur", false, 1},
    {StageKind::motion_blur, "motion-blur", false, 1},
    {StageKind::jpeg_compression, "jpeg-like-compression", false, 4},
    {StageKind::down_up_resample, "down-up-resample", false, 2},
    {StageKind::color_shift, "color-shift", false, 0},
    {StageKind::inhom_noise_field, "inhom-noise-field", true, 3},
    {StageKind::inhom_blur_field, "inhom-blur-field", true, 1},
    {StageKind::local_occlusion, "local-occlusion", true, 5},
    {StageKind::film_grain, "film-grain", false, 3},
};

const KindInfo& info(StageKind kind) {
  auto idx = static_cast<std::size_t>(kind);
  if (idx >= std::size(kKinds)) throw ConfigError("unknown stage kind id");
  return kKinds[idx];
}

std::uint64_t kind_id(StageKind kind) {
  return static_cast<std::uint64_t>(static_cast<int>(kind));
}

torch::Tensor reflect_pad(const torch::Tensor& x, std::int64_t p) {
  if (p <= 0) return x;
  if (p >= x.size(-1) || p >= x.size(-2))
    throw SizeError("kernel radius " + std::to_string(p) + " too large for " +
                    std::to_string(x.size(-2)) + "x" + std::to_string(x.size(-1)) + " image");
  return F::pad(x, F::PadFuncOptions({p, p, p, p}).mode(torch::kReflect));
}

torch::Tensor gaussian_kernel_1d(double sigma, const torch::TensorOptions& opts) {
  auto r = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(3.0 * sigma)));
  auto xs = torch::arange(-r, r + 1, opts);
  auto k = torch::exp(-(xs * xs) / (2.0 * sigma * sigma));
  return k / k.sum();
}

// Separable depthwise Gaussian blur with reflective padding.
torch::Tensor gaussian_blur(const torch::Tensor& x, double sigma) {
  if (sigma <= 0) return x;
  const auto c = x.size(1);
  auto k = gaussian_kernel_1d(sigma, x.options());
  const auto r = (k.size(0) - 1) / 2;
  auto p = reflect_pad(x, r);
  auto kh = k.view({1, 1, 1, -1}).expand({c, 1, 1, k.size(0)});
  p = F::conv2d(p, kh, F::Conv2dFuncOptions().groups(c));
  auto kv = k.view({1, 1, -1, 1}).expand({c, 1, k.size(0), 1});
  return F::conv2d(p, kv, F::Conv2dFuncOptions().groups(c));
}

torch::Tensor motion_kernel(double length, double angle_deg, const torch::TensorOptions& opts) {
  auto len = static_cast<std::int64_t>(std::llround(length));
  if (len % 2 == 0) len += 1;
  len = std::max<std::int64_t>(3, len);
  const auto r = len / 2;
  auto coords = torch::arange(-r, r + 1, opts);
  auto yy = coords.view({-1, 1}).expand({len, len});
  auto xx = coords.view({1, -1}).expand({len, len});
  const double th = angle_deg * M_PI / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  auto dist = (xx * (-s) + yy * c).abs();        // perpendicular distance to the line
  auto along = (xx * c + yy * s).abs();          // position along the streak
  auto w = (1.0 - dist).clamp_min(0) * (along <= length / 2.0);
  return w / w.sum();
}

torch::Tensor conv_full_kernel(const torch::Tensor& x, const torch::Tensor& k2d) {
  const auto c = x.size(1);
  const auto r = (k2d.size(0) - 1) / 2;
  auto p = reflect_pad(x, r);
  auto k = k2d.view({1, 1, k2d.size(0), k2d.size(1)}).expand({c, 1, k2d.size(0), k2d.size(1)});
  return F::conv2d(p, k, F::Conv2dFuncOptions().groups(c));
}

torch::Tensor dct8_matrix(const torch::TensorOptions& opts) {
  auto d = torch::empty({8, 8}, opts);
  for (int k = 0; k < 8; ++k) {
    const double ck = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
    for (int n = 0; n < 8; ++n)
      d[k][n] = ck * std::cos((2 * n + 1) * k * M_PI / 16.0);
  }
  return d;
}

// IJG luminance base table.
constexpr int kJpegBase[64] = {
    16, 11, 10, 16, 24,  40,  51,  61,   //
    12, 12, 14, 19, 26,  58,  60,  55,   //
    14, 13, 16, 24, 40,  57,  69,  56,   //
    14, 17, 22, 29, 51,  87,  80,  62,   //
    18, 22, 37, 56, 68,  109, 103, 77,   //
    24, 35, 55, 64, 81,  104, 113, 92,   //
    49, 64, 78, 87, 103, 121, 120, 101,  //
    72, 92, 95, 98, 112, 100, 103, 99,
};

torch::Tensor jpeg_quant_table(int quality, const torch::TensorOptions& opts) {
  const double scale = quality < 50 ? 5000.0 / quality : 200.0 - 2.0 * quality;
  auto q = torch::empty({8, 8}, opts);
  for (int i = 0; i < 64; ++i) {
    auto v = std::floor((kJpegBase[i] * scale + 50.0) / 100.0);
    q.view(-1)[i] = std::max(1.0, v);
  }
  return q;
}

// Round with identity gradient, so the same code serves data generation and
// the differentiable surrogate in restoration.
torch::Tensor round_ste(const torch::Tensor& t) {
  return t + (t.round() - t).detach();
}

torch::Tensor jpeg_like(const torch::Tensor& x, int quality) {
  const auto b = x.size(0), c = x.size(1);
  auto scaled = x * 255.0 - 128.0;
  auto padded = pad_to_multiple(scaled, 8);
  const auto h = padded.tensor.size(-2), w = padded.tensor.size(-1);
  auto blocks = padded.tensor.reshape({b, c, h / 8, 8, w / 8, 8})
                    .permute({0, 1, 2, 4, 3, 5})
                    .contiguous();
  auto d = dct8_matrix(x.options());
  auto q = jpeg_quant_table(quality, x.options());
  auto coeff = torch::matmul(torch::matmul(d, blocks), d.t());
  auto deq = round_ste(coeff / q) * q;
  auto rec = torch::matmul(torch::matmul(d.t(), deq), d);
  auto out = rec.permute({0, 1, 2, 4, 3, 5}).reshape({b, c, h, w});
  return (crop_to(out, padded.orig_h, padded.orig_w) + 128.0) / 255.0;
}

torch::Tensor down_up(const torch::Tensor& x, double factor) {
  const auto h = x.size(-2), w = x.size(-1);
  const auto h2 = std::max<std::int64_t>(1, std::llround(h / factor));
  const auto w2 = std::max<std::int64_t>(1, std::llround(w / factor));
  auto down = F::interpolate(
      x, F::InterpolateFuncOptions().size(std::vector<std::int64_t>{h2, w2}).mode(torch::kArea));
  return F::interpolate(down, F::InterpolateFuncOptions()
                                  .size(std::vector<std::int64_t>{h, w})
                                  .mode(torch::kBilinear)
                                  .align_corners(false));
}

double param(const StageSpec& s, const char* name) {
  auto it = s.params.find(name);
  if (it == s.params.end())
    throw ConfigError(std::string(to_string(s.kind)) + ": missing parameter '" + name + "'");
  return it->second;
}

torch::Tensor apply_stage(const torch::Tensor& x, const StageSpec& stage,
                          std::uint64_t stage_seed) {
  const auto b = x.size(0);
  const auto h = x.size(-2), w = x.size(-1);
  switch (stage.kind) {
    case StageKind::gaussian_noise: {
      const double sigma = param(stage, "sigma");
      if (sigma == 0) return x;  // exact identity, including bit pattern
      auto gen = make_generator(stage_seed);
      auto noise = torch::randn(x.sizes(), gen, x.options());
      return (x + sigma * noise).clamp(0, 1);
    }
    case StageKind::gaussian_blur:
      return gaussian_blur(x, param(stage, "sigma")).clamp(0, 1);
    case StageKind::motion_blur: {
      auto k = motion_kernel(param(stage, "length"), param(stage, "angle"), x.options());
      return conv_full_kernel(x, k).clamp(0, 1);
    }
    case StageKind::jpeg_compression:
      return jpeg_like(x, static_cast<int>(param(stage, "quality"))).clamp(0, 1);
    case StageKind::down_up_resample:
      return down_up(x, param(stage, "factor")).clamp(0, 1);
    case StageKind::color_shift: {
      auto gain = torch::tensor({param(stage, "gain_r"), param(stage, "gain_g"),
                                 param(stage, "gain_b")},
                                x.options())
                      .view({1, 3, 1, 1});
      auto offset = torch::tensor({param(stage, "offset_r"), param(stage, "offset_g"),
                                   param(stage, "offset_b")},
                                  x.options())
                        .view({1, 3, 1, 1});
      return (x * gain + offset).clamp(0, 1);
    }
    case StageKind::inhom_noise_field: {
      const double sigma_max = param(stage, "sigma_max");
      const auto grid = static_cast<std::int64_t>(param(stage, "grid"));
      auto field = smooth_field(grid, mix_seed(stage.field_seed, kind_id(stage.kind)), h, w)
                       .to(x.options());
      auto gen = make_generator(stage_seed);
      auto noise = torch::randn(x.sizes(), gen, x.options());
      return (x + sigma_max * field * noise).clamp(0, 1);
    }
    case StageKind::inhom_blur_field: {
      const double sigma_max = param(stage, "sigma_max");
      const auto grid = static_cast<std::int64_t>(param(stage, "grid"));
      auto field = smooth_field(grid, mix_seed(stage.field_seed, kind_id(stage.kind)), h, w)
                       .to(x.options());
      auto sigma_map = sigma_max * field;  // [1,1,H,W]
      const double step = sigma_max / 3.0;
      // Blend four blur levels with hat weights; they partition unity over
      // [0, sigma_max].
      auto out = torch::zeros_like(x);
      for (int level = 0; level < 4; ++level) {
        const double s_l = level * step;
        auto blurred = level == 0 ? x : gaussian_blur(x, s_l);
        auto wgt = (1.0 - (sigma_map - s_l).abs() / step).clamp_min(0);
        out = out + wgt * blurred;
      }
      return out.clamp(0, 1);
    }
    case StageKind::local_occlusion: {
      const auto count = static_cast<int>(param(stage, "count"));
      const double strength = param(stage, "strength");
      SplitMix rng(mix_seed(stage.field_seed, kind_id(stage.kind)));
      auto ys = torch::arange(h, x.options()).view({1, 1, h, 1});
      auto xs = torch::arange(w, x.options()).view({1, 1, 1, w});
      const double mindim = static_cast<double>(std::min(h, w));
      auto out = x;
      for (int i = 0; i < count; ++i) {
        const double cx = rng.uniform(0.15, 0.85) * w;
        const double cy = rng.uniform(0.15, 0.85) * h;
        const double ax = rng.uniform(0.05, 0.2) * mindim;
        const double ay = rng.uniform(0.05, 0.2) * mindim;
        const double phi = rng.uniform(0, M_PI);
        const double cr = rng.uniform(0.2, 0.9);
        const double cg = rng.uniform(0.2, 0.9);
        const double cb = rng.uniform(0.2, 0.9);
        auto dx = xs - cx, dy = ys - cy;
        auto xr = dx * std::cos(phi) + dy * std::sin(phi);
        auto yr = -dx * std::sin(phi) + dy * std::cos(phi);
        auto q = (xr / ax).pow(2) + (yr / ay).pow(2);
        auto alpha = strength * torch::sigmoid(6.0 * (1.0 - q));
        auto color = torch::tensor({cr, cg, cb}, x.options()).view({1, 3, 1, 1});
        out = (1.0 - alpha) * out + alpha * color;
      }
      return out.clamp(0, 1);
    }
    case StageKind::film_grain: {
      const double strength = param(stage, "strength");
      auto gen = make_generator(stage_seed);
      auto noise = torch::randn({b, 1, h, w}, gen, x.options());
      auto grain = gaussian_blur(noise, 0.7);
      auto sd = grain.flatten(1).std(1, /*unbiased=*/false).clamp_min(1e-8).view({b, 1, 1, 1});
      grain = grain / sd;
      auto lum = x.mean(1, /*keepdim=*/true);
      auto amp = 4.0 * lum * (1.0 - lum);
      return (x + 0.08 * strength * amp * grain).clamp(0, 1);
    }
  }
  throw ConfigError("unhandled stage kind");
}

void validate_stage(const StageSpec& stage) {
  const auto& ranges = default_ranges(stage.kind);
  for (const auto& [name, range] : ranges) {
    auto it = stage.params.find(name);
    if (it == stage.params.end())
      throw ConfigError(std::string(to_string(stage.kind)) + ": missing parameter '" + name +
                        "'");
    const double v = it->second;
    if (!(v >= range.lo && v <= range.hi))
      throw ConfigError(std::string(to_string(stage.kind)) + ": parameter '" + name + "'=" +
                        std::to_string(v) + " outside [" + std::to_string(range.lo) + ", " +
                        std::to_string(range.hi) + "]");
    if (range.integral && v != std::floor(v))
      throw ConfigError(std::string(to_string(stage.kind)) + ": parameter '" + name +
                        "' must be integral");
  }
  for (const auto& [name, v] : stage.params)
    if (!ranges.count(name))
      throw ConfigError(std::string(to_string(stage.kind)) + ": unknown parameter '" + name +
                        "'");
}

}  // namespace

const char* to_string(StageKind kind) { return info(kind).name; }

StageKind stage_kind_from_string(const std::string& name) {
  for (const auto& k : kKinds)
    if (name == k.name) return k.kind;
  throw ConfigError("unknown stage kind: '" + name + "'");
}

bool is_inhomogeneous(StageKind kind) { return info(kind).inhom; }

int stage_rank(StageKind kind) { return info(kind).rank; }

const std::map<std::string, ParamRange>& default_ranges(StageKind kind) {
  static const std::map<StageKind, std::map<std::string, ParamRange>> table = {
      {StageKind::gaussian_noise, {{"sigma", {0.0, 0.5}}}},
      {StageKind::gaussian_blur, {{"sigma", {0.3, 4.0}}}},
      {StageKind::motion_blur, {{"length", {3, 31, true}}, {"angle", {0.0, 180.0}}}},
      {StageKind::jpeg_compression, {{"quality", {5, 100, true}}}},
      {StageKind::down_up_resample, {{"factor", {1.5, 4.0}}}},
      {StageKind::color_shift,
       {{"gain_r", {0.7, 1.3}},
        {"gain_g", {0.7, 1.3}},
        {"gain_b", {0.7, 1.3}},
        {"offset_r", {-0.15, 0.15}},
        {"offset_g", {-0.15, 0.15}},
        {"offset_b", {-0.15, 0.15}}}},
      {StageKind::inhom_noise_field, {{"sigma_max", {0.1, 0.5}}, {"grid", {3, 6, true}}}},
      {StageKind::inhom_blur_field, {{"sigma_max", {1.0, 4.0}}, {"grid", {3, 6, true}}}},
      {StageKind::local_occlusion, {{"count", {1, 3, true}}, {"strength", {0.5, 1.0}}}},
      {StageKind::film_grain, {{"strength", {0.2, 1.0}}}},
  };
  return table.at(kind);
}

void DegradationSpec::validate() const {
  if (stages.empty() || stages.size() > 4)
    throw ConfigError("spec must have 1..4 stages, has " + std::to_string(stages.size()));
  for (const auto& s : stages) validate_stage(s);
}

DegradationSpec DegradationSpec::canonicalized() const {
  DegradationSpec out = *this;
  std::stable_sort(out.stages.begin(), out.stages.end(), [](const auto& a, const auto& b) {
    if (stage_rank(a.kind) != stage_rank(b.kind)) return stage_rank(a.kind) < stage_rank(b.kind);
    return static_cast<int>(a.kind) < static_cast<int>(b.kind);
  });
  return out;
}

DegradationSpec DegradationSpec::homogeneous_part() const {
  DegradationSpec out;
  for (const auto& s : stages)
    if (!is_inhomogeneous(s.kind)) out.stages.push_back(s);
  return out;
}

DegradationSpec DegradationSpec::inhomogeneous_part() const {
  DegradationSpec out;
  for (const auto& s : stages)
    if (is_inhomogeneous(s.kind)) out.stages.push_back(s);
  return out;
}

nlohmann::json DegradationSpec::to_json() const {
  nlohmann::json stages_j = nlohmann::json::array();
  for (const auto& s : stages) {
    nlohmann::json sj;
    sj["kind"] = to_string(s.kind);
    sj["params"] = s.params;
    sj["field_seed"] = s.field_seed;
    stages_j.push_back(std::move(sj));
  }
  return nlohmann::json{{"stages", std::move(stages_j)}};
}

DegradationSpec DegradationSpec::from_json(const nlohmann::json& j) {
  DegradationSpec spec;
  if (!j.contains("stages") || !j["stages"].is_array())
    throw ConfigError("degradation spec JSON: missing 'stages' array");
  for (const auto& sj : j["stages"]) {
    StageSpec s;
    s.kind = stage_kind_from_string(sj.at("kind").get<std::string>());
    for (const auto& [name, v] : sj.at("params").items()) s.params[name] = v.get<double>();
    s.field_seed = sj.value("field_seed", std::uint64_t{0});
    spec.stages.push_back(std::move(s));
  }
  return spec;
}

PoolConfig PoolConfig::default_pool() {
  PoolConfig p;
  for (const auto& k : kKinds)
    if (k.kind != StageKind::film_grain) p.kinds.push_back(k.kind);
  for (auto kind : p.kinds) p.ranges[kind] = default_ranges(kind);
  return p;
}

PoolConfig PoolConfig::homogeneous_pool() {
  PoolConfig p = default_pool();
  std::erase_if(p.kinds, [](StageKind k) { return is_inhomogeneous(k); });
  std::erase_if(p.ranges, [](const auto& kv) { return is_inhomogeneous(kv.first); });
  return p;
}

PoolConfig PoolConfig::inhomogeneous_pool() {
  PoolConfig p = default_pool();
  std::erase_if(p.kinds, [](StageKind k) { return !is_inhomogeneous(k); });
  std::erase_if(p.ranges, [](const auto& kv) { return !is_inhomogeneous(kv.first); });
  return p;
}

PoolConfig PoolConfig::single(StageKind kind) {
  PoolConfig p;
  p.kinds = {kind};
  p.ranges[kind] = default_ranges(kind);
  p.arity_weights = {1};
  return p;
}

void PoolConfig::validate() const {
  if (kinds.empty()) throw ConfigError("degradation pool is empty");
  if (arity_weights.empty()) throw ConfigError("pool arity distribution is empty");
  for (auto kind : kinds)
    if (!ranges.count(kind))
      throw ConfigError(std::string("pool missing ranges for kind ") + to_string(kind));
}

DegradationSpec sample_pipeline(const PoolConfig& pool, std::uint64_t rng_seed) {
  pool.validate();
  SplitMix rng(mix_seed(rng_seed, 0x5A3));

  const auto max_arity = std::min<std::size_t>(pool.arity_weights.size(), pool.kinds.size());
  std::vector<double> w(pool.arity_weights.begin(), pool.arity_weights.begin() + max_arity);
  const auto arity = rng.weighted_index(w) + 1;

  auto kinds = pool.kinds;
  rng.shuffle(kinds);
  kinds.resize(arity);

  DegradationSpec spec;
  for (auto kind : kinds) {
    StageSpec s;
    s.kind = kind;
    for (const auto& [name, range] : pool.ranges.at(kind)) {
      s.params[name] = range.integral
                           ? static_cast<double>(rng.uniform_int(
                                 static_cast<std::int64_t>(range.lo),
                                 static_cast<std::int64_t>(range.hi)))
                           : rng.uniform(range.lo, range.hi);
    }
    if (is_inhomogeneous(kind)) s.field_seed = rng.next_u64();
    spec.stages.push_back(std::move(s));
  }
  return spec.canonicalized();
}

torch::Tensor smooth_field(std::int64_t grid, std::uint64_t seed, std::int64_t h,
                           std::int64_t w) {
  auto gen = make_generator(seed);
  auto z = torch::randn({1, 1, grid, grid}, gen, torch::kFloat32);
  auto up = F::interpolate(z, F::InterpolateFuncOptions()
                                  .size(std::vector<std::int64_t>{h, w})
                                  .mode(torch::kBilinear)
                                  .align_corners(true));
  return torch::sigmoid(1.2 * up);
}

torch::Tensor apply_degradation(const torch::Tensor& x, const DegradationSpec& spec,
                                std::uint64_t seed) {
  spec.validate();
  const bool chw = x.dim() == 3;
  auto t = chw ? x.unsqueeze(0) : x;
  if (t.dim() != 4 || t.size(1) != 3)
    throw ShapeError("apply_degradation: expected [3,H,W] or [B,3,H,W]");
  if (t.size(-2) < 32 || t.size(-1) < 32)
    throw SizeError("apply_degradation: image below 32x32 minimum");
  t = t.clamp(0, 1);
  for (std::size_t i = 0; i < spec.stages.size(); ++i) {
    const auto& stage = spec.stages[i];
    t = apply_stage(t, stage, mix_seed(seed, i, kind_id(stage.kind)));
  }
  return chw ? t.squeeze(0) : t;
}

Image apply_degradation(const Image& x, const DegradationSpec& spec, std::uint64_t seed) {
  x.require_pipeline_size();
  torch::NoGradGuard ng;
  auto y = apply_degradation(x.tensor(), spec, seed);
  return Image(y, x.source_id());
}

}  // namespace udm
