#include "udm/inversion.hpp"

#include <cmath>

#include "udm/metrics.hpp"
#include "udm/tensor_io.hpp"

namespace udm {

namespace {

namespace F = torch::nn::functional;

const std::string kToyMagic = "UDMTOYG1";

bool power_of_two(std::int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

// Channel schedule: widest at the 4x4 bottleneck, never below `width`.
std::int64_t dec_channels(std::int64_t width, std::int64_t i) {
  return std::max(width, (4 * width) >> i);
}

torch::Tensor as_batch(const torch::Tensor& y) {
  return y.dim() == 3 ? y.unsqueeze(0) : y;
}

}  // namespace

void ToyGenConfig::validate() const {
  if (latent_dim < 1) throw ConfigError("ToyGenConfig: latent_dim must be >= 1");
  if (size < 16 || !power_of_two(size))
    throw ConfigError("ToyGenConfig: size must be a power of two >= 16");
  if (width < 4) throw ConfigError("ToyGenConfig: width must be >= 4");
  if (steps < 1 || batch < 1) throw ConfigError("ToyGenConfig: steps and batch must be >= 1");
  if (lr <= 0) throw ConfigError("ToyGenConfig: lr must be positive");
}

nlohmann::json ToyGenConfig::to_json() const {
  return {{"latent_dim", latent_dim}, {"size", size}, {"width", width},
          {"steps", steps},           {"batch", batch}, {"lr", lr},
          {"seed", seed}};
}

ToyGenConfig ToyGenConfig::from_json(const nlohmann::json& j) {
  ToyGenConfig c;
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.size = j.value("size", c.size);
  c.width = j.value("width", c.width);
  c.steps = j.value("steps", c.steps);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.seed = j.value("seed", c.seed);
  return c;
}

ToyGenerator::ToyGenerator(ToyGenConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto n_up =
      static_cast<std::int64_t>(std::llround(std::log2(static_cast<double>(cfg_.size) / 4)));

  fc_in_ = register_module(
      "fc_in", torch::nn::Linear(cfg_.latent_dim, dec_channels(cfg_.width, 0) * 16));
  for (std::int64_t i = 0; i < n_up; ++i) {
    auto conv = torch::nn::Conv2d(torch::nn::Conv2dOptions(dec_channels(cfg_.width, i),
                                                           dec_channels(cfg_.width, i + 1), 3)
                                      .padding(1));
    up_convs_.push_back(register_module("up_" + std::to_string(i), conv));
  }
  head_ = register_module(
      "head", torch::nn::Conv2d(
                  torch::nn::Conv2dOptions(dec_channels(cfg_.width, n_up), 3, 3).padding(1)));

  for (std::int64_t i = 0; i < n_up; ++i) {
    const auto in = i == 0 ? 3 : dec_channels(cfg_.width, n_up - i);
    const auto out = dec_channels(cfg_.width, n_up - 1 - i);
    auto conv = torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(2).padding(1));
    down_convs_.push_back(register_module("down_" + std::to_string(i), conv));
  }
  fc_out_ = register_module(
      "fc_out", torch::nn::Linear(dec_channels(cfg_.width, 0) * 16, cfg_.latent_dim));
}

torch::Tensor ToyGenerator::forward(const torch::Tensor& w) {
  if (w.dim() != 2 || w.size(1) != cfg_.latent_dim)
    throw ShapeError("ToyGenerator: latent must be [B, " + std::to_string(cfg_.latent_dim) +
                     "]");
  auto x = torch::silu(fc_in_->forward(w)).view({w.size(0), dec_channels(cfg_.width, 0), 4, 4});
  for (auto& conv : up_convs_) {
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .scale_factor(std::vector<double>{2.0, 2.0})
                              .mode(torch::kNearest));
    x = torch::silu(conv->forward(x));
  }
  return torch::sigmoid(head_->forward(x));
}

torch::Tensor ToyGenerator::encode(const torch::Tensor& image) {
  auto x = as_batch(image);
  if (x.dim() != 4 || x.size(1) != 3 || x.size(2) != cfg_.size || x.size(3) != cfg_.size)
    throw ShapeError("ToyGenerator: encode expects [B, 3, " + std::to_string(cfg_.size) +
                     ", " + std::to_string(cfg_.size) + "]");
  for (auto& conv : down_convs_) x = torch::silu(conv->forward(x));
  return fc_out_->forward(x.flatten(1));
}

std::shared_ptr<ToyGenerator> train_toy_generator(const std::vector<torch::Tensor>& corpus,
                                                  const ToyGenConfig& cfg) {
  cfg.validate();
  if (corpus.size() < 200)
    throw InputError("train_toy_generator: need at least 200 corpus images, got " +
                     std::to_string(corpus.size()));
  for (const auto& t : corpus)
    if (t.dim() != 3 || t.size(0) != 3 || t.size(1) != cfg.size || t.size(2) != cfg.size)
      throw InputError("train_toy_generator: corpus entries must be [3, size, size]");

  torch::manual_seed(mix_seed(cfg.seed, 0x706e));
  auto gen = std::make_shared<ToyGenerator>(cfg);
  torch::optim::Adam opt(gen->parameters(), torch::optim::AdamOptions(cfg.lr));
  const auto n = static_cast<std::int64_t>(corpus.size());

  for (int step = 0; step < cfg.steps; ++step) {
    SplitMix rng(mix_seed(cfg.seed, 0x70A11, static_cast<std::uint64_t>(step)));
    std::vector<torch::Tensor> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch));
    for (int b = 0; b < cfg.batch; ++b)
      batch.push_back(corpus[static_cast<std::size_t>(rng.uniform_int(0, n - 1))]);
    auto x = torch::stack(batch);

    auto rec = gen->forward(gen->encode(x));
    auto loss = torch::l1_loss(rec, x) + d_perc(x, rec).mean();
    const double value = loss.item<double>();
    if (!std::isfinite(value))
      throw DivergenceError("train_toy_generator: non-finite loss at step " +
                            std::to_string(step + 1));
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  return gen;
}

void save_toy_generator(const std::string& path, const ToyGenerator& gen) {
  std::vector<std::pair<std::string, torch::Tensor>> tensors;
  collect_named_tensors("gen", gen, tensors);
  nlohmann::json extra;
  extra["config"] = gen.config().to_json();
  save_tensor_container(path, kToyMagic, extra, tensors);
}

std::shared_ptr<ToyGenerator> load_toy_generator(const std::string& path) {
  auto container = load_tensor_container(path, kToyMagic);
  auto gen = std::make_shared<ToyGenerator>(
      ToyGenConfig::from_json(container.extra.at("config")));
  std::vector<std::pair<std::string, torch::Tensor>> tensors;
  collect_named_tensors("gen", *gen, tensors);
  restore_named_tensors(container.tensors, tensors, "toy generator");
  return gen;
}

void RestoreConfig::validate() const {
  if (steps < 1) throw ConfigError("RestoreConfig: steps must be >= 1");
  if (mc_samples < 1) throw ConfigError("RestoreConfig: mc_samples must be >= 1");
  if (lr_latent <= 0 || lr_embed <= 0)
    throw ConfigError("RestoreConfig: learning rates must be positive");
  if (anchor_weight < 0) throw ConfigError("RestoreConfig: anchor_weight must be >= 0");
}

namespace {

torch::Tensor check_observation(const torch::Tensor& y, const Generator& gen) {
  if (y.dim() != 3 || y.size(0) != 3)
    throw InputError("restore: observation must be [3, H, W]");
  if (y.size(1) != gen.output_size() || y.size(2) != gen.output_size())
    throw InputError("restore: observation is " + std::to_string(y.size(1)) + "x" +
                     std::to_string(y.size(2)) + " but the generator produces " +
                     std::to_string(gen.output_size()) + "x" +
                     std::to_string(gen.output_size()));
  return y.unsqueeze(0);
}

torch::Tensor initial_latent(const torch::Tensor& y4, Generator& gen,
                             const RestoreConfig& cfg) {
  if (cfg.init_latent.defined()) {
    if (cfg.init_latent.dim() != 2 || cfg.init_latent.size(0) != 1 ||
        cfg.init_latent.size(1) != gen.latent_dim())
      throw InputError("restore: init_latent must be [1, latent_dim]");
    return cfg.init_latent.detach().clone();
  }
  switch (cfg.init) {
    case LatentInit::zero:
      return torch::zeros({1, gen.latent_dim()});
    case LatentInit::random: {
      auto g = make_generator(mix_seed(cfg.seed, 0x1A7e));
      return torch::randn({1, gen.latent_dim()}, g);
    }
    case LatentInit::encoder: {
      torch::NoGradGuard ng;
      auto w = gen.encode(y4);
      if (!w.defined())
        throw ConfigError("restore: generator has no encoder; use zero or random init");
      return w.detach().clone();
    }
  }
  throw ConfigError("restore: unknown latent init");
}

nlohmann::json trace_json(const RestoreReport& report) {
  auto arr = nlohmann::json::array();
  for (const auto& s : report.trace)
    arr.push_back({{"objective", s.objective}, {"fit", s.fit}, {"anchor", s.anchor}});
  return arr;
}

std::vector<double> to_vector(const torch::Tensor& t) {
  auto flat = t.detach().to(torch::kFloat64).contiguous().flatten();
  return std::vector<double>(flat.data_ptr<double>(), flat.data_ptr<double>() + flat.numel());
}

}  // namespace

nlohmann::json RestoreResult::to_json() const {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["mode"] = report.mode;
  j["steps_requested"] = report.steps_requested;
  j["steps_taken"] = report.steps_taken;
  j["initial_objective"] = report.initial_objective();
  j["final_objective"] = report.final_objective();
  j["final_fit"] = report.trace.back().fit;
  j["trace"] = trace_json(report);
  j["latent"] = to_vector(latent);
  if (e_g.defined()) {
    j["embeddings"]["e_g"] = to_vector(e_g);
    j["embeddings"]["e_l"] = to_vector(e_l);
    j["embeddings"]["e_l_shape"] =
        std::vector<std::int64_t>(e_l.sizes().begin(), e_l.sizes().end());
  }
  return j;
}

RestoreResult restore_nonblind(const torch::Tensor& y, Generator& gen,
                               const DegradationSpec& known, const RestoreConfig& cfg) {
  cfg.validate();
  for (const auto& stage : known.stages)
    if (stage.kind == StageKind::local_occlusion)
      throw ConfigError(
          "restore_nonblind: local occlusion replaces content and has no usable "
          "inversion surrogate");

  auto y4 = check_observation(y, gen);
  const auto noise_seed = mix_seed(cfg.seed, 0xDE61);
  auto w0 = initial_latent(y4, gen, cfg);

  auto objective = [&](const torch::Tensor& w) {
    auto gx = gen.forward(w);
    auto fit = d_perc(y4, apply_degradation(gx, known, noise_seed)).mean();
    auto anchor = cfg.anchor_weight * (w - w0).pow(2).sum();
    return std::pair{fit + anchor, fit};
  };

  RestoreResult result;
  result.report.mode = "nonblind";
  result.report.steps_requested = cfg.steps;

  auto w = w0.clone().set_requires_grad(true);
  auto [obj, fit] = objective(w);
  result.report.trace.push_back(
      {obj.item<double>(), fit.item<double>(),
       obj.item<double>() - fit.item<double>()});

  for (int step = 0; step < cfg.steps; ++step) {
    auto grad = torch::autograd::grad({obj}, {w})[0];
    const double gnorm2 = grad.pow(2).sum().item<double>();
    if (gnorm2 == 0) break;

    // Armijo backtracking: accept the first halved step with sufficient
    // decrease; give up (converged) when none of them qualifies.
    const double obj_value = obj.item<double>();
    double t = cfg.lr_latent;
    torch::Tensor w_next;
    double obj_next = 0, fit_next = 0;
    bool accepted = false;
    for (int halving = 0; halving < 24; ++halving) {
      auto w_try = (w - t * grad).detach();
      double obj_try, fit_try;
      {
        torch::NoGradGuard ng;
        auto [o, f] = objective(w_try);
        obj_try = o.item<double>();
        fit_try = f.item<double>();
      }
      if (obj_try <= obj_value - 1e-4 * t * gnorm2) {
        w_next = w_try;
        obj_next = obj_try;
        fit_next = fit_try;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;

    w = w_next.set_requires_grad(true);
    result.report.trace.push_back({obj_next, fit_next, obj_next - fit_next});
    result.report.steps_taken = step + 1;
    if (step + 1 < cfg.steps) std::tie(obj, fit) = objective(w);
  }

  torch::NoGradGuard ng;
  result.image = gen.forward(w).squeeze(0);
  result.latent = w.detach();
  return result;
}

namespace {

// Shared Adam loop for the blind and naive modes. `fit_fn(step)` must build
// the differentiable fit term; `vars` are optimized, the first one being the
// anchored latent.
RestoreResult adam_restore(const std::string& mode, Generator& gen, torch::Tensor w,
                           std::vector<torch::Tensor> embed_vars,
                           const std::function<torch::Tensor(int)>& fit_fn,
                           const RestoreConfig& cfg) {
  auto w0 = w.detach().clone();
  std::vector<torch::Tensor> vars{w};
  for (auto& v : embed_vars) vars.push_back(v);

  torch::optim::Adam opt({torch::optim::OptimizerParamGroup({w})},
                         torch::optim::AdamOptions(cfg.lr_latent));
  if (!embed_vars.empty()) {
    torch::optim::OptimizerParamGroup group(embed_vars);
    group.set_options(std::make_unique<torch::optim::AdamOptions>(cfg.lr_embed));
    opt.add_param_group(group);
  }

  RestoreResult result;
  result.report.mode = mode;
  result.report.steps_requested = cfg.steps;

  for (int step = 0; step <= cfg.steps; ++step) {
    auto fit = fit_fn(step);
    auto anchor = cfg.anchor_weight * (w - w0).pow(2).sum();
    auto obj = fit + anchor;
    const double obj_value = obj.item<double>();
    const double fit_value = fit.item<double>();
    if (!std::isfinite(obj_value))
      throw NumericError("restore: non-finite objective at step " + std::to_string(step));
    result.report.trace.push_back({obj_value, fit_value, obj_value - fit_value});
    if (step == cfg.steps) break;

    // autograd::grad instead of backward keeps .grad off every tensor the
    // objective touched through the shared model.
    auto grads = torch::autograd::grad({obj}, vars);
    for (std::size_t i = 0; i < vars.size(); ++i) vars[i].mutable_grad() = grads[i];
    opt.step();
    result.report.steps_taken = step + 1;
  }

  torch::NoGradGuard ng;
  result.image = gen.forward(w).squeeze(0);
  result.latent = w.detach();
  return result;
}

}  // namespace

RestoreResult restore_blind(const torch::Tensor& y, Generator& gen,
                            DegradationModel& model, const RestoreConfig& cfg) {
  cfg.validate();
  auto y4 = check_observation(y, gen);
  const auto size = gen.output_size();
  const auto stride = model.encoder_config().stride;
  const auto down = std::int64_t{1} << model.synth_config().depth;
  if (size % stride != 0 || size % down != 0)
    throw ConfigError("restore_blind: generator output " + std::to_string(size) +
                      " is incompatible with the model (stride " + std::to_string(stride) +
                      ", depth factor " + std::to_string(down) + ")");

  torch::Tensor e_g, e_l;
  {
    torch::NoGradGuard ng;
    e_g = model.encode_global(y4).detach();
    e_l = model.encode_local(y4).detach();
  }
  e_g.set_requires_grad(true);
  e_l.set_requires_grad(true);
  auto w = initial_latent(y4, gen, cfg).set_requires_grad(true);

  auto fit_fn = [&, y4](int step) {
    auto gx = gen.forward(w);
    auto map = model.combiner->forward(e_g, e_l);
    torch::Tensor acc;
    for (int m = 0; m < cfg.mc_samples; ++m) {
      NoiseState ns(mix_seed(cfg.seed, static_cast<std::uint64_t>(step),
                             static_cast<std::uint64_t>(m)));
      auto term = d_perc(y4, model.synth->forward(gx, map, &ns)).mean();
      acc = acc.defined() ? acc + term : term;
    }
    return acc / cfg.mc_samples;
  };

  auto result = adam_restore("blind", gen, w, {e_g, e_l}, fit_fn, cfg);
  result.e_g = e_g.detach();
  result.e_l = e_l.detach();
  return result;
}

RestoreResult restore_naive(const torch::Tensor& y, Generator& gen,
                            const RestoreConfig& cfg) {
  cfg.validate();
  auto y4 = check_observation(y, gen);
  auto w = initial_latent(y4, gen, cfg).set_requires_grad(true);
  auto fit_fn = [&, y4](int) { return d_perc(y4, gen.forward(w)).mean(); };
  return adam_restore("naive", gen, w, {}, fit_fn, cfg);
}

double blind_objective_sample(const torch::Tensor& y, const torch::Tensor& candidate,
                              const torch::Tensor& e_g, const torch::Tensor& e_l,
                              DegradationModel& model, int mc_samples,
                              std::uint64_t seed) {
  if (mc_samples < 1) throw ConfigError("blind_objective_sample: mc_samples must be >= 1");
  torch::NoGradGuard ng;
  auto y4 = as_batch(y);
  auto x4 = as_batch(candidate);
  auto map = model.combiner->forward(e_g, e_l);
  double acc = 0;
  for (int m = 0; m < mc_samples; ++m) {
    NoiseState ns(mix_seed(seed, static_cast<std::uint64_t>(m)));
    acc += d_perc(y4, model.synth->forward(x4, map, &ns)).mean().item<double>();
  }
  return acc / mc_samples;
}

}  // namespace udm
