#include "udm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "udm/metrics.hpp"

namespace udm {

namespace {

const char* activation_name(Activation a) {
  return a == Activation::silu ? "silu" : "relu";
}

Activation activation_from(const std::string& s) {
  if (s == "silu") return Activation::silu;
  if (s == "relu") return Activation::relu;
  throw ConfigError("unknown activation: " + s);
}

nlohmann::json weights_json(const LossWeights& w) {
  return {{"lambda_g_rate", w.lambda_g_rate}, {"lambda_l_rate", w.lambda_l_rate},
          {"lambda_contra", w.lambda_contra}, {"lambda_color", w.lambda_color},
          {"lambda_diver", w.lambda_diver},   {"lambda_gan", w.lambda_gan}};
}

LossWeights weights_from(const nlohmann::json& j) {
  LossWeights w;
  w.lambda_g_rate = j.value("lambda_g_rate", w.lambda_g_rate);
  w.lambda_l_rate = j.value("lambda_l_rate", w.lambda_l_rate);
  w.lambda_contra = j.value("lambda_contra", w.lambda_contra);
  w.lambda_color = j.value("lambda_color", w.lambda_color);
  w.lambda_diver = j.value("lambda_diver", w.lambda_diver);
  w.lambda_gan = j.value("lambda_gan", w.lambda_gan);
  return w;
}

// Serialized config with run-local fields blanked; equality of this form is
// what the resume compatibility check compares. `steps` stays in: the cosine
// schedule depends on the horizon, so continuing under a different one would
// not reproduce the uninterrupted run.
nlohmann::json arch_json(const TrainConfig& c) {
  auto j = c.to_json();
  j.erase("manifest_dir");
  j.erase("out_dir");
  j.erase("resume_from");
  j.erase("finetune_from");
  j.erase("checkpoint_every");
  return j;
}

nlohmann::json arch_only(const TrainConfig& c) {
  nlohmann::json j;
  j["enc"] = {{"d_g", c.enc.d_g},           {"c_l", c.enc.c_l},
              {"stride", c.enc.stride},     {"long_range", c.enc.long_range},
              {"width", c.enc.width},       {"activation", activation_name(c.enc.activation)}};
  j["synth"] = {{"map_channels", c.synth.map_channels},
                {"base_width", c.synth.base_width},
                {"depth", c.synth.depth},
                {"activation", activation_name(c.synth.activation)}};
  j["use_ida"] = c.use_ida;
  j["use_iden"] = c.use_iden;
  return j;
}

std::string opt_bytes(torch::optim::Optimizer& opt) {
  torch::serialize::OutputArchive ar;
  opt.save(ar);
  std::ostringstream ss;
  ar.save_to(ss);
  return ss.str();
}

void load_opt(torch::optim::Optimizer& opt, const std::string& bytes) {
  torch::serialize::InputArchive ar;
  std::istringstream ss(bytes);
  ar.load_from(ss);
  opt.load(ar);
}

struct PairData {
  torch::Tensor x, y;
};

std::vector<PairData> load_pairs(const DatasetManifest& manifest, int crop) {
  if (manifest.pairs.empty()) throw InputError("train: manifest has no pairs");
  std::vector<PairData> out;
  out.reserve(manifest.pairs.size());
  for (const auto& p : manifest.pairs) {
    auto x = load_image(manifest.resolve(p.pristine)).tensor();
    auto y = load_image(manifest.resolve(p.distorted)).tensor();
    if (x.sizes() != y.sizes())
      throw InputError("train: pair size mismatch for " + p.pristine);
    if (x.size(1) < crop || x.size(2) < crop)
      throw InputError("train: image smaller than crop size: " + p.pristine);
    out.push_back({x, y});
  }
  return out;
}

torch::Tensor crop_at(const torch::Tensor& t, std::int64_t r, std::int64_t c,
                      std::int64_t size) {
  return t.slice(1, r, r + size).slice(2, c, c + size);
}

void set_lr(torch::optim::Optimizer& opt, double lr) {
  for (auto& group : opt.param_groups())
    static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

double metric_of(const MetricsRecord& r, int which) {
  return which == 0 ? r.ms_ssim : which == 1 ? r.ssim : r.d_perc;
}

nlohmann::json stats_json(std::vector<double> v) {
  const auto n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  std::sort(v.begin(), v.end());
  const double median = v.size() % 2 ? v[v.size() / 2]
                                     : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  const double stddev = v.size() > 1 ? std::sqrt(var / (n - 1)) : 0.0;
  return {{"mean", mean}, {"median", median}, {"stddev", stddev}};
}

// Linear softmax probe: standardized features, full-batch Adam, returns
// held-out accuracy.
double linear_probe_accuracy(const torch::Tensor& feats, const torch::Tensor& labels,
                             std::int64_t classes, std::uint64_t seed) {
  const auto n = feats.size(0);
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  SplitMix rng(mix_seed(seed, 0x9208e));
  rng.shuffle(order);
  const auto n_train = std::max<std::int64_t>(1, (n * 7) / 10);
  if (n_train >= n) throw InputError("probe: too few items to split");
  auto idx = torch::tensor(order);
  auto train_idx = idx.slice(0, 0, n_train);
  auto test_idx = idx.slice(0, n_train, n);

  auto mu = feats.index_select(0, train_idx).mean(0, true);
  auto sd = feats.index_select(0, train_idx).std(0, true).clamp_min(1e-6);
  auto z = (feats - mu) / sd;
  auto z_train = z.index_select(0, train_idx);
  auto y_train = labels.index_select(0, train_idx);

  auto gen = make_generator(mix_seed(seed, 0x990b));
  auto w = (0.01 * torch::randn({feats.size(1), classes}, gen, torch::kFloat64))
               .set_requires_grad(true);
  auto b = torch::zeros({classes}, torch::kFloat64).set_requires_grad(true);
  torch::optim::Adam opt({w, b}, torch::optim::AdamOptions(0.05));
  for (int step = 0; step < 400; ++step) {
    opt.zero_grad();
    auto logits = z_train.matmul(w) + b;
    auto loss = torch::nll_loss(torch::log_softmax(logits, 1), y_train);
    loss.backward();
    opt.step();
  }
  torch::NoGradGuard ng;
  auto pred = (z.index_select(0, test_idx).matmul(w) + b).argmax(1);
  return (pred == labels.index_select(0, test_idx)).to(torch::kFloat64).mean().item<double>();
}

}  // namespace

void TrainConfig::validate() const {
  if (manifest_dir.empty()) throw ConfigError("TrainConfig: manifest_dir is required");
  if (out_dir.empty()) throw ConfigError("TrainConfig: out_dir is required");
  if (steps < 1 || batch < 1) throw ConfigError("TrainConfig: steps and batch must be >= 1");
  if (lr_main <= 0 || lr_dis <= 0 || lr_density <= 0)
    throw ConfigError("TrainConfig: learning rates must be positive");
  if (checkpoint_every < 1) throw ConfigError("TrainConfig: checkpoint_every must be >= 1");
  enc.validate();
  synth.validate();
  weights.validate();
  if (crop < 1 || crop % enc.stride != 0)
    throw ConfigError("TrainConfig: crop must be a positive multiple of the encoder stride");
  if (crop % (1LL << synth.depth) != 0)
    throw ConfigError("TrainConfig: crop must be divisible by 2^depth of the synthesis net");
  if (!resume_from.empty() && !finetune_from.empty())
    throw ConfigError("TrainConfig: resume_from and finetune_from are exclusive");
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j;
  j["manifest_dir"] = manifest_dir;
  j["out_dir"] = out_dir;
  j["steps"] = steps;
  j["batch"] = batch;
  j["crop"] = crop;
  j["lr_main"] = lr_main;
  j["lr_dis"] = lr_dis;
  j["lr_density"] = lr_density;
  j["weights"] = weights_json(weights);
  j["enc"] = {{"d_g", enc.d_g},           {"c_l", enc.c_l},
              {"stride", enc.stride},     {"long_range", enc.long_range},
              {"width", enc.width},       {"activation", activation_name(enc.activation)}};
  j["synth"] = {{"map_channels", synth.map_channels},
                {"base_width", synth.base_width},
                {"depth", synth.depth},
                {"activation", activation_name(synth.activation)}};
  j["use_ida"] = use_ida;
  j["use_iden"] = use_iden;
  j["seed"] = seed;
  j["checkpoint_every"] = checkpoint_every;
  j["resume_from"] = resume_from;
  j["finetune_from"] = finetune_from;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.manifest_dir = j.value("manifest_dir", std::string());
  c.out_dir = j.value("out_dir", std::string());
  c.steps = j.value("steps", c.steps);
  c.batch = j.value("batch", c.batch);
  c.crop = j.value("crop", c.crop);
  c.lr_main = j.value("lr_main", c.lr_main);
  c.lr_dis = j.value("lr_dis", c.lr_dis);
  c.lr_density = j.value("lr_density", c.lr_density);
  if (j.contains("weights")) c.weights = weights_from(j.at("weights"));
  if (j.contains("enc")) {
    const auto& e = j.at("enc");
    c.enc.d_g = e.value("d_g", c.enc.d_g);
    c.enc.c_l = e.value("c_l", c.enc.c_l);
    c.enc.stride = e.value("stride", c.enc.stride);
    c.enc.long_range = e.value("long_range", c.enc.long_range);
    c.enc.width = e.value("width", c.enc.width);
    c.enc.activation = activation_from(e.value("activation", std::string("silu")));
  }
  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    c.synth.map_channels = s.value("map_channels", c.synth.map_channels);
    c.synth.base_width = s.value("base_width", c.synth.base_width);
    c.synth.depth = s.value("depth", c.synth.depth);
    c.synth.activation = activation_from(s.value("activation", std::string("silu")));
  }
  c.use_ida = j.value("use_ida", c.use_ida);
  c.use_iden = j.value("use_iden", c.use_iden);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.resume_from = j.value("resume_from", std::string());
  c.finetune_from = j.value("finetune_from", std::string());
  return c;
}

TrainSystem TrainSystem::build(const TrainConfig& cfg) {
  // Module initializers draw from the global generator; pinning it here makes
  // construction a pure function of the config.
  torch::manual_seed(mix_seed(cfg.seed, 0xB01D));
  TrainSystem sys;
  sys.model = std::make_shared<DegradationModel>(cfg.enc, cfg.synth, cfg.use_ida,
                                                 cfg.use_iden);
  sys.dis = std::make_shared<PatchDiscriminator>();
  sys.dis->zero_final_layer();
  DensityConfig dg;
  dg.channels = cfg.enc.d_g;
  DensityConfig dl;
  dl.channels = cfg.enc.c_l;
  sys.density_g = std::make_shared<FactorizedDensity>(dg, mix_seed(cfg.seed, 0xD65));
  sys.density_l = std::make_shared<FactorizedDensity>(dl, mix_seed(cfg.seed, 0xD61));
  return sys;
}

TrainResult train(const TrainConfig& cfg_in) {
  TrainConfig cfg = cfg_in;
  cfg.validate();
  std::filesystem::create_directories(cfg.out_dir);
  const auto csv_path = cfg.out_dir + "/metrics.csv";
  const auto ckpt_path = cfg.out_dir + "/checkpoint.ckpt";

  auto manifest = DatasetManifest::load(cfg.manifest_dir);
  auto pairs = load_pairs(manifest, cfg.crop);
  const auto n_pairs = static_cast<std::int64_t>(pairs.size());

  TrainSystem sys;
  int start_step = 0;
  std::map<std::string, std::string> resume_blobs;
  if (!cfg.resume_from.empty()) {
    auto ckpt = load_checkpoint(cfg.resume_from);
    if (arch_json(ckpt.config) != arch_json(cfg))
      throw IncompatError("train: resume config does not match checkpoint config");
    sys = ckpt.system;
    start_step = ckpt.step;
    resume_blobs = ckpt.blobs;
    if (start_step >= cfg.steps)
      throw ConfigError("train: checkpoint is already at or past the requested steps");
  } else if (!cfg.finetune_from.empty()) {
    auto ckpt = load_checkpoint(cfg.finetune_from);
    if (arch_only(ckpt.config) != arch_only(cfg))
      throw IncompatError("train: finetune base has a different architecture");
    sys = ckpt.system;
  } else {
    sys = TrainSystem::build(cfg);
  }

  std::vector<torch::Tensor> main_params = sys.model->parameters();
  std::vector<torch::Tensor> dens_params = sys.density_g->parameters();
  for (auto& p : sys.density_l->parameters()) dens_params.push_back(p);
  torch::optim::Adam opt_main(main_params, torch::optim::AdamOptions(cfg.lr_main));
  torch::optim::Adam opt_dis(sys.dis->parameters(), torch::optim::AdamOptions(cfg.lr_dis));
  torch::optim::Adam opt_dens(dens_params, torch::optim::AdamOptions(cfg.lr_density));
  if (resume_blobs.count("opt_main")) load_opt(opt_main, resume_blobs.at("opt_main"));
  if (resume_blobs.count("opt_dis")) load_opt(opt_dis, resume_blobs.at("opt_dis"));
  if (resume_blobs.count("opt_dens")) load_opt(opt_dens, resume_blobs.at("opt_dens"));

  const bool fresh_csv = start_step == 0 || !std::filesystem::exists(csv_path);
  std::ofstream csv(csv_path, fresh_csv ? std::ios::trunc : std::ios::app);
  if (!csv) throw IoError("train: cannot write " + csv_path);
  if (fresh_csv)
    csv << "step,l_sim,l_rate_g,l_rate_l,l_contra,l_color,l_diver,l_gan_g,l_gan_d,total\n";

  const bool use_rate_g = cfg.weights.lambda_g_rate > 0;
  const bool use_rate_l = cfg.weights.lambda_l_rate > 0 && cfg.use_iden;
  const bool use_gan = cfg.weights.lambda_gan > 0;
  const bool use_dens = use_rate_g || use_rate_l;

  auto save_with_opts = [&](const std::string& path, int step) {
    std::map<std::string, std::string> blobs;
    blobs["opt_main"] = opt_bytes(opt_main);
    blobs["opt_dis"] = opt_bytes(opt_dis);
    blobs["opt_dens"] = opt_bytes(opt_dens);
    save_checkpoint(path, sys, cfg, step, blobs);
  };

  // Rolling copy of the parameters as they were when they last produced a
  // finite loss, i.e. before the optimizer update that may break them. On
  // divergence this state is written out so a run can be salvaged.
  std::vector<torch::Tensor> all_params = main_params;
  for (auto& p : sys.dis->parameters()) all_params.push_back(p);
  for (auto& p : dens_params) all_params.push_back(p);
  std::vector<torch::Tensor> snapshot;
  int snapshot_step = start_step;
  auto take_snapshot = [&](int step) {
    snapshot.clear();
    for (auto& p : all_params) snapshot.push_back(p.detach().clone());
    snapshot_step = step;
  };
  auto save_last_good = [&]() {
    if (!snapshot.empty()) {
      torch::NoGradGuard ng;
      for (std::size_t i = 0; i < all_params.size(); ++i)
        all_params[i].detach().copy_(snapshot[i]);
    }
    const auto path = cfg.out_dir + "/last_good.ckpt";
    save_checkpoint(path, sys, cfg, snapshot_step);
    return path;
  };

  for (int step = start_step; step < cfg.steps; ++step) {
    const double decay = 0.5 * (1.0 + std::cos(M_PI * step / cfg.steps));
    set_lr(opt_main, cfg.lr_main * decay);
    set_lr(opt_dis, cfg.lr_dis * decay);
    set_lr(opt_dens, cfg.lr_density * decay);

    try {
      // Entry-indexed sampling: one global permutation per epoch, crops from a
      // per-step stream. Everything derives from (seed, step), so a resumed
      // run continues the interrupted one exactly.
      std::vector<torch::Tensor> xs, ys, y2s;
      SplitMix crop_rng(mix_seed(cfg.seed, 0xC209, static_cast<std::uint64_t>(step)));
      for (int b = 0; b < cfg.batch; ++b) {
        const auto pos = static_cast<std::int64_t>(step) * cfg.batch + b;
        const auto epoch = static_cast<std::uint64_t>(pos / n_pairs);
        std::vector<std::int64_t> perm(static_cast<std::size_t>(n_pairs));
        std::iota(perm.begin(), perm.end(), 0);
        SplitMix perm_rng(mix_seed(cfg.seed, 0xE90C, epoch));
        perm_rng.shuffle(perm);
        const auto& pair = pairs[static_cast<std::size_t>(perm[pos % n_pairs])];
        const auto h = pair.x.size(1), w = pair.x.size(2);
        const auto r1 = crop_rng.uniform_int(0, h - cfg.crop);
        const auto c1 = crop_rng.uniform_int(0, w - cfg.crop);
        const auto r2 = crop_rng.uniform_int(0, h - cfg.crop);
        const auto c2 = crop_rng.uniform_int(0, w - cfg.crop);
        xs.push_back(crop_at(pair.x, r1, c1, cfg.crop));
        ys.push_back(crop_at(pair.y, r1, c1, cfg.crop));
        y2s.push_back(crop_at(pair.y, r2, c2, cfg.crop));
      }
      auto x = torch::stack(xs);
      auto y = torch::stack(ys);
      auto y2 = torch::stack(y2s);

      auto e_g = sys.model->encode_global(y);
      auto e_l = sys.model->encode_local(y);
      auto map = sys.model->combiner->forward(e_g, e_l);
      const auto step_seed = mix_seed(cfg.seed, 0x57E9, static_cast<std::uint64_t>(step));
      NoiseState ns1(mix_seed(step_seed, 1)), ns2(mix_seed(step_seed, 2));
      auto yhat = sys.model->synth->forward(x, map, &ns1);
      auto yhat2 = sys.model->synth->forward(x, map, &ns2);

      LossComponents comps;
      comps.sim = 0.5 * (d_perc(y, yhat).mean() + d_perc(y, yhat2).mean());
      auto qgen = make_generator(mix_seed(step_seed, 3));
      if (use_rate_g) comps.rate_g = rate_loss_global(e_g, *sys.density_g, &qgen);
      if (use_rate_l) comps.rate_l = rate_loss_local(e_l, *sys.density_l, &qgen);
      if (cfg.batch >= 2) {
        auto e_g2 = sys.model->encode_global(y2);
        std::vector<torch::Tensor> negs;
        for (int i = 0; i < cfg.batch; ++i) {
          std::vector<torch::Tensor> rows;
          for (int j = 0; j < cfg.batch; ++j)
            if (j != i) rows.push_back(e_g2[j]);
          negs.push_back(torch::stack(rows));
        }
        comps.contra = contrastive_loss(e_g, e_g2, torch::stack(negs));
      } else {
        comps.contra = torch::zeros({}, x.options());
      }
      comps.color = 0.5 * (color_loss(y, yhat) + color_loss(y, yhat2));
      comps.diver = diversity_loss(yhat, yhat2);

      double gan_d_value = 0;
      std::optional<GanLosses> gl;
      if (use_gan) {
        gl = gan_losses(*sys.dis, y, yhat);
        comps.gan_g = gl->g_loss;
        gan_d_value = gl->d_loss.item<double>();
      }

      auto breakdown = total_loss(comps, cfg.weights);
      const double total_value = breakdown.total.item<double>();
      const bool finite = std::isfinite(total_value) && std::isfinite(gan_d_value);
      if (!finite) {
        const auto path = save_last_good();
        throw DivergenceError("train: non-finite loss at step " + std::to_string(step + 1) +
                              "; last good state: " + path);
      }
      take_snapshot(step);

      opt_main.zero_grad();
      opt_dens.zero_grad();
      breakdown.total.backward();
      if (use_gan) {
        // The generator term above leaked gradient into the discriminator;
        // clear it before the discriminator's own update.
        opt_dis.zero_grad();
        gl->d_loss.backward();
      }
      opt_main.step();
      if (use_dens) opt_dens.step();
      if (use_gan) opt_dis.step();

      char row[512];
      std::snprintf(row, sizeof(row),
                    "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", step + 1,
                    breakdown.sim, breakdown.rate_g, breakdown.rate_l, breakdown.contra,
                    breakdown.color, breakdown.diver, breakdown.gan_g, gan_d_value,
                    total_value);
      csv << row;
      csv.flush();
    } catch (const NumericError& e) {
      const auto path = save_last_good();
      throw DivergenceError(std::string("train: ") + e.what() + " at step " +
                            std::to_string(step + 1) + "; last good state: " + path);
    }

    // Cadence saves get step-stamped names so an interrupted run leaves a
    // resumable artifact that the final save does not overwrite.
    if ((step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.steps) {
      char name[64];
      std::snprintf(name, sizeof(name), "/checkpoint_%06d.ckpt", step + 1);
      save_with_opts(cfg.out_dir + name, step + 1);
    }
  }

  save_with_opts(ckpt_path, cfg.steps);
  return {ckpt_path, csv_path, cfg.steps - start_step};
}

TrainResult finetune(TrainConfig cfg, const std::string& base_checkpoint) {
  cfg.finetune_from = base_checkpoint;
  return train(cfg);
}

TransferFn make_transfer_fn(DegradationModel& model, std::uint64_t seed) {
  return [&model, seed](const torch::Tensor& x, const torch::Tensor& y_ref,
                        std::uint64_t item_seed) {
    torch::NoGradGuard ng;
    auto xb = x.unsqueeze(0);
    auto yb = y_ref.unsqueeze(0);
    auto map = model.combiner->forward(model.encode_global(yb), model.encode_local(yb));
    NoiseState ns(mix_seed(seed, item_seed));
    return model.synth->forward(xb, map, &ns).squeeze(0);
  };
}

namespace {

MetricsRecord score(const std::string& task, const torch::Tensor& estimate,
                    const torch::Tensor& truth) {
  torch::NoGradGuard ng;
  MetricsRecord r;
  r.task = task;
  r.ms_ssim = ms_ssim(estimate, truth).item<double>();
  r.ssim = ssim(estimate, truth).item<double>();
  r.d_perc = d_perc(estimate, truth).item<double>();
  return r;
}

}  // namespace

std::vector<MetricsRecord> evaluate_reproduction(const DatasetManifest& manifest,
                                                 const TransferFn& fn) {
  if (manifest.triplets.empty()) throw InputError("evaluate: manifest has no triplets");
  std::vector<MetricsRecord> out;
  std::uint64_t item = 0;
  for (const auto& t : manifest.triplets) {
    auto x0 = load_image(manifest.resolve(t.x0)).tensor();
    auto y0 = load_image(manifest.resolve(t.y0)).tensor();
    out.push_back(score("reproduce", fn(x0, y0, item++), y0));
  }
  return out;
}

std::vector<MetricsRecord> evaluate_transfer(const DatasetManifest& manifest,
                                             const TransferFn& fn) {
  if (manifest.triplets.empty()) throw InputError("evaluate: manifest has no triplets");
  std::vector<MetricsRecord> out;
  std::uint64_t item = 0;
  for (const auto& t : manifest.triplets) {
    auto x0 = load_image(manifest.resolve(t.x0)).tensor();
    auto y0 = load_image(manifest.resolve(t.y0)).tensor();
    auto y1 = load_image(manifest.resolve(t.y1)).tensor();
    out.push_back(score("transfer", fn(x0, y1, item++), y0));
  }
  return out;
}

std::vector<MetricsRecord> evaluate_ablation_transfers(const DatasetManifest& manifest,
                                                       DegradationModel& model,
                                                       std::uint64_t seed) {
  if (manifest.quadruplets.empty())
    throw InputError("evaluate: manifest has no quadruplets");
  torch::NoGradGuard ng;
  std::vector<MetricsRecord> out;
  std::uint64_t item = 0;
  for (const auto& q : manifest.quadruplets) {
    auto x0 = load_image(manifest.resolve(q.x0)).tensor().unsqueeze(0);
    auto y0 = load_image(manifest.resolve(q.y0)).tensor();
    auto y1 = load_image(manifest.resolve(q.y1)).tensor().unsqueeze(0);
    auto y2 = load_image(manifest.resolve(q.y2)).tensor().unsqueeze(0);
    auto y3 = load_image(manifest.resolve(q.y3)).tensor().unsqueeze(0);
    auto gt_global = load_image(manifest.resolve(q.gt_global)).tensor();
    auto gt_mixed = load_image(manifest.resolve(q.gt_mixed)).tensor();

    auto synth_with = [&](const torch::Tensor& e_g, const torch::Tensor& e_l,
                          std::uint64_t tag) {
      auto map = model.combiner->forward(e_g, e_l);
      NoiseState ns(mix_seed(seed, item, tag));
      return model.synth->forward(x0, map, &ns).squeeze(0);
    };

    auto eg1 = model.encode_global(y1);
    auto el1 = model.encode_local(y1);
    out.push_back(score("direct", synth_with(eg1, el1, 1), y0));

    auto eg2 = model.encode_global(y2);
    out.push_back(
        score("global-only", synth_with(eg2, torch::zeros_like(el1), 2), gt_global));

    auto el3 = model.encode_local(y3);
    out.push_back(score("mixed", synth_with(eg1, el3, 3), gt_mixed));
    ++item;
  }
  return out;
}

nlohmann::json summarize(const std::vector<MetricsRecord>& records) {
  if (records.empty()) throw InputError("summarize: no records");
  nlohmann::json tasks;
  static const char* metric_names[3] = {"ms_ssim", "ssim", "d_perc"};
  std::map<std::string, std::vector<MetricsRecord>> by_task;
  for (const auto& r : records) by_task[r.task].push_back(r);
  for (const auto& [task, group] : by_task) {
    nlohmann::json t;
    t["count"] = group.size();
    for (int m = 0; m < 3; ++m) {
      std::vector<double> v;
      v.reserve(group.size());
      for (const auto& r : group) v.push_back(metric_of(r, m));
      t[metric_names[m]] = stats_json(std::move(v));
    }
    tasks[task] = t;
  }
  return {{"schema_version", 1}, {"tasks", tasks}};
}

ProbeReport probe_disentanglement(const DatasetManifest& manifest, Hden& encoder,
                                  std::uint64_t seed) {
  if (manifest.pairs.empty()) throw InputError("probe: manifest has no pairs");
  std::map<std::string, std::int64_t> content_ids;
  std::map<int, std::int64_t> kind_ids;
  std::vector<torch::Tensor> feats;
  std::vector<std::int64_t> kind_labels, content_labels;
  {
    torch::NoGradGuard ng;
    for (const auto& p : manifest.pairs) {
      if (p.spec.stages.empty()) throw InputError("probe: pair with empty spec");
      const int kind = static_cast<int>(p.spec.canonicalized().stages.front().kind);
      auto y = load_image(manifest.resolve(p.distorted)).tensor().unsqueeze(0);
      feats.push_back(encoder.forward(y).squeeze(0).to(torch::kFloat64));
      kind_labels.push_back(
          kind_ids.emplace(kind, static_cast<std::int64_t>(kind_ids.size())).first->second);
      content_labels.push_back(
          content_ids.emplace(p.pristine, static_cast<std::int64_t>(content_ids.size()))
              .first->second);
    }
  }
  if (content_ids.size() < 2)
    throw InputError("probe: need at least two content classes");

  ProbeReport report;
  report.kinds = static_cast<int>(kind_ids.size());
  report.content_classes = static_cast<int>(content_ids.size());
  report.kind_chance = 1.0 / report.kinds;
  report.content_chance = 1.0 / report.content_classes;
  auto f = torch::stack(feats);
  report.kind_accuracy = linear_probe_accuracy(
      f, torch::tensor(kind_labels), report.kinds, mix_seed(seed, 1));
  report.content_accuracy = linear_probe_accuracy(
      f, torch::tensor(content_labels), report.content_classes, mix_seed(seed, 2));
  return report;
}

}  // namespace udm
