#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest_compat.hpp"
#include "udm/fixtures.hpp"
#include "udm/trainer.hpp"

using namespace udm;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / "udm_trainer_tests" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::vector<std::string> csv_lines(const fs::path& p) {
  std::ifstream f(p);
  REQUIRE(f.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) lines.push_back(line);
  return lines;
}

// Corpus and manifests shared by the training cases; generated once.
struct TinyData {
  std::string train_dir;
  std::string eval_dir;
};

const TinyData& tiny_data() {
  static const TinyData data = [] {
    auto src = fresh_dir("corpus");
    write_pristine_corpus(src.string(), 2, 64, 64, 314);
    auto train_out = fresh_dir("train_set");
    generate_pairs(src.string(), train_out.string(), 4, PoolConfig::default_pool(), 21);
    auto eval_out = fresh_dir("eval_set");
    generate_eval_sets(src.string(), eval_out.string(), 2, PoolConfig::default_pool(), 22);
    return TinyData{train_out.string(), eval_out.string()};
  }();
  return data;
}

// Small architecture to keep the loop cheap; crop 32 suits stride 8, depth 2.
TrainConfig tiny_config(const std::string& out_dir) {
  TrainConfig cfg;
  cfg.manifest_dir = tiny_data().train_dir;
  cfg.out_dir = out_dir;
  cfg.steps = 3;
  cfg.batch = 2;
  cfg.crop = 32;
  cfg.enc.d_g = 8;
  cfg.enc.c_l = 4;
  cfg.enc.width = 12;
  cfg.synth.map_channels = 8;
  cfg.synth.base_width = 12;
  cfg.synth.depth = 2;
  cfg.checkpoint_every = 2;
  cfg.seed = 5;
  return cfg;
}

bool params_equal(torch::nn::Module& a, torch::nn::Module& b) {
  auto pa = a.named_parameters();
  auto pb = b.named_parameters();
  if (pa.size() != pb.size()) return false;
  for (const auto& item : pa) {
    if (!pb.contains(item.key())) return false;
    if (!item.value().equal(pb[item.key()])) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("train config validates and round trips through json") {
  auto cfg = tiny_config("/tmp/unused");
  CHECK_NOTHROW(cfg.validate());
  auto j = cfg.to_json();
  auto back = TrainConfig::from_json(j);
  CHECK(back.to_json() == j);
  CHECK(back.crop == cfg.crop);
  CHECK(back.enc.width == cfg.enc.width);
  CHECK(back.synth.depth == cfg.synth.depth);
  CHECK(back.weights.lambda_gan == cfg.weights.lambda_gan);
}

TEST_CASE("train config rejects bad values") {
  auto ok = tiny_config("/tmp/unused");
  auto expect_bad = [](TrainConfig c) { CHECK_THROWS_AS(c.validate(), ConfigError); };

  auto c = ok;
  c.crop = 30;  // not a multiple of the encoder stride
  expect_bad(c);
  c = ok;
  c.synth.depth = 4;
  c.crop = 24;  // multiple of stride 8 but not of 2^4
  expect_bad(c);
  c = ok;
  c.steps = 0;
  expect_bad(c);
  c = ok;
  c.batch = 0;
  expect_bad(c);
  c = ok;
  c.lr_main = 0;
  expect_bad(c);
  c = ok;
  c.checkpoint_every = 0;
  expect_bad(c);
  c = ok;
  c.resume_from = "a.ckpt";
  c.finetune_from = "b.ckpt";
  expect_bad(c);
  c = ok;
  c.manifest_dir.clear();
  expect_bad(c);
}

TEST_CASE("training system construction is deterministic in the seed") {
  auto cfg = tiny_config("/tmp/unused");
  auto a = TrainSystem::build(cfg);
  auto b = TrainSystem::build(cfg);
  CHECK(params_equal(*a.model, *b.model));
  CHECK(params_equal(*a.dis, *b.dis));
  CHECK(params_equal(*a.density_g, *b.density_g));

  auto cfg2 = cfg;
  cfg2.seed = 6;
  auto c = TrainSystem::build(cfg2);
  CHECK(!params_equal(*a.model, *c.model));
}

TEST_CASE("checkpoint saves and restores the full system bit-exactly") {
  auto dir = fresh_dir("ckpt_roundtrip");
  auto cfg = tiny_config(dir.string());
  auto sys = TrainSystem::build(cfg);

  std::map<std::string, std::string> blobs;
  blobs["opt_main"] = std::string("bin\0ary\0blob", 12);
  blobs["extra"] = "plain";
  auto path = (dir / "sys.ckpt").string();
  save_checkpoint(path, sys, cfg, 17, blobs);

  auto loaded = load_checkpoint(path);
  CHECK(loaded.step == 17);
  CHECK(loaded.config.to_json() == cfg.to_json());
  CHECK(loaded.blobs == blobs);
  CHECK(params_equal(*sys.model, *loaded.system.model));
  CHECK(params_equal(*sys.dis, *loaded.system.dis));

  // Forward agreement: same inputs, same noise, identical outputs.
  torch::NoGradGuard ng;
  auto x = make_toy_image(1).unsqueeze(0);
  auto y = make_toy_image(2).unsqueeze(0);
  auto run = [&](TrainSystem& s) {
    auto map = s.model->combiner->forward(s.model->encode_global(y), s.model->encode_local(y));
    NoiseState ns(99);
    return s.model->synth->forward(x, map, &ns);
  };
  CHECK(run(sys).equal(run(loaded.system)));
  CHECK(sys.dis->forward(x).equal(loaded.system.dis->forward(x)));

  auto gen_a = make_generator(3);
  auto gen_b = make_generator(3);
  auto e = torch::randn({cfg.enc.d_g, 4});
  CHECK(sys.density_g->bits(e, &gen_a).equal(loaded.system.density_g->bits(e, &gen_b)));
}

TEST_CASE("checkpoint loading rejects corrupted and missing files") {
  auto dir = fresh_dir("ckpt_corrupt");
  CHECK_THROWS_AS(load_checkpoint((dir / "nope.ckpt").string()), IoError);

  auto cfg = tiny_config(dir.string());
  auto sys = TrainSystem::build(cfg);
  auto path = (dir / "sys.ckpt").string();
  save_checkpoint(path, sys, cfg, 1);

  auto bytes = file_bytes(path);
  {
    auto bad = bytes;
    bad[0] = 'X';
    std::ofstream(dir / "badmagic.ckpt", std::ios::binary) << bad;
    CHECK_THROWS_AS(load_checkpoint((dir / "badmagic.ckpt").string()), IncompatError);
  }
  {
    std::ofstream(dir / "trunc.ckpt", std::ios::binary) << bytes.substr(0, 10);
    CHECK_THROWS_AS(load_checkpoint((dir / "trunc.ckpt").string()), IoError);
  }
}

TEST_CASE("short training run produces finite metrics, a checkpoint, and a csv") {
  auto out = fresh_dir("smoke");
  auto cfg = tiny_config(out.string());
  auto result = train(cfg);
  CHECK(result.steps_done == 3);

  auto ckpt = load_checkpoint(result.checkpoint_path);
  CHECK(ckpt.step == 3);
  CHECK(ckpt.blobs.count("opt_main") == 1);
  CHECK(ckpt.blobs.count("opt_dis") == 1);
  CHECK(ckpt.blobs.count("opt_dens") == 1);

  auto lines = csv_lines(result.csv_path);
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] == "step,l_sim,l_rate_g,l_rate_l,l_contra,l_color,l_diver,l_gan_g,l_gan_d,total");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::stringstream ss(lines[i]);
    std::string field;
    int n = 0;
    while (std::getline(ss, field, ',')) {
      CHECK(std::isfinite(std::stod(field)));
      ++n;
    }
    CHECK(n == 10);
    CHECK(lines[i].substr(0, 2) == std::to_string(i) + ",");
  }
}

TEST_CASE("training is deterministic in the seed") {
  auto out_a = fresh_dir("det_a");
  auto out_b = fresh_dir("det_b");
  auto cfg_a = tiny_config(out_a.string());
  cfg_a.steps = 2;
  auto cfg_b = tiny_config(out_b.string());
  cfg_b.steps = 2;

  auto ra = train(cfg_a);
  auto rb = train(cfg_b);
  CHECK(file_bytes(ra.csv_path) == file_bytes(rb.csv_path));

  auto sa = load_checkpoint(ra.checkpoint_path);
  auto sb = load_checkpoint(rb.checkpoint_path);
  CHECK(params_equal(*sa.system.model, *sb.system.model));
}

TEST_CASE("resume reproduces an uninterrupted run exactly") {
  // The uninterrupted reference leaves a step-stamped cadence checkpoint at
  // step 2; resuming from it in a fresh directory must replay steps 3-4
  // bit-exactly (same crops, same noise, same optimizer state).
  auto out_full = fresh_dir("resume_full");
  auto cfg_full = tiny_config(out_full.string());
  cfg_full.steps = 4;
  cfg_full.checkpoint_every = 2;
  auto r_full = train(cfg_full);
  auto mid_ckpt = (out_full / "checkpoint_000002.ckpt").string();
  REQUIRE(fs::exists(mid_ckpt));

  auto out_rest = fresh_dir("resume_rest");
  auto cfg_rest = tiny_config(out_rest.string());
  cfg_rest.steps = 4;
  cfg_rest.checkpoint_every = 2;
  cfg_rest.resume_from = mid_ckpt;
  auto r_rest = train(cfg_rest);
  CHECK(r_rest.steps_done == 2);

  auto full_lines = csv_lines(r_full.csv_path);
  auto rest_lines = csv_lines(r_rest.csv_path);
  REQUIRE(full_lines.size() == 5);
  REQUIRE(rest_lines.size() == 3);
  CHECK(rest_lines[0] == full_lines[0]);
  CHECK(rest_lines[1] == full_lines[3]);
  CHECK(rest_lines[2] == full_lines[4]);

  auto s_full = load_checkpoint(r_full.checkpoint_path);
  auto s_rest = load_checkpoint(r_rest.checkpoint_path);
  CHECK(params_equal(*s_full.system.model, *s_rest.system.model));
  CHECK(params_equal(*s_full.system.dis, *s_rest.system.dis));
  CHECK(params_equal(*s_full.system.density_g, *s_rest.system.density_g));
  CHECK(params_equal(*s_full.system.density_l, *s_rest.system.density_l));

  // Stale resume target: already at the requested step count.
  auto cfg_stale = tiny_config(out_rest.string());
  cfg_stale.steps = 4;
  cfg_stale.resume_from = r_rest.checkpoint_path;
  CHECK_THROWS_AS(train(cfg_stale), ConfigError);

  // Config drift, including a different step horizon, is refused.
  auto cfg_drift = tiny_config(out_rest.string());
  cfg_drift.steps = 6;
  cfg_drift.resume_from = mid_ckpt;
  CHECK_THROWS_AS(train(cfg_drift), IncompatError);
  auto cfg_drift_lr = tiny_config(out_rest.string());
  cfg_drift_lr.steps = 4;
  cfg_drift_lr.lr_main = 1e-5;
  cfg_drift_lr.resume_from = mid_ckpt;
  CHECK_THROWS_AS(train(cfg_drift_lr), IncompatError);
}

TEST_CASE("finetune restarts from checkpoint weights with a fresh schedule") {
  auto out_base = fresh_dir("ft_base");
  auto cfg_base = tiny_config(out_base.string());
  cfg_base.steps = 1;
  auto base = train(cfg_base);

  auto out_ft = fresh_dir("ft_run");
  auto cfg_ft = tiny_config(out_ft.string());
  cfg_ft.steps = 1;
  cfg_ft.seed = 123;  // different run seed is allowed; only the arch must match
  auto r = finetune(cfg_ft, base.checkpoint_path);
  CHECK(r.steps_done == 1);
  CHECK(load_checkpoint(r.checkpoint_path).step == 1);

  auto cfg_bad = tiny_config(fresh_dir("ft_bad").string());
  cfg_bad.enc.d_g = 16;
  CHECK_THROWS_AS(finetune(cfg_bad, base.checkpoint_path), IncompatError);
}

TEST_CASE("divergence aborts with a recoverable state") {
  auto out = fresh_dir("diverge");
  auto cfg = tiny_config(out.string());
  cfg.steps = 8;
  // A huge generator lr alone self-stabilizes: the synthesis output clamp and
  // the density's likelihood floor saturate every loss and kill the gradients.
  // The discriminator has no such floor, so its conv chain overflows.
  cfg.lr_dis = 1e20;
  CHECK_THROWS_AS(train(cfg), DivergenceError);

  auto saved = load_checkpoint((out / "last_good.ckpt").string());
  CHECK(saved.step < 8);
  // The salvaged parameters still produce finite outputs, including in the
  // discriminator, which is the part that overflowed.
  torch::NoGradGuard ng;
  auto y = make_toy_image(4).unsqueeze(0);
  auto e_g = saved.system.model->encode_global(y);
  CHECK(e_g.isfinite().all().item<bool>());
  CHECK(saved.system.dis->forward(y).isfinite().all().item<bool>());
}

TEST_CASE("transfer on an untrained model returns the content image unchanged") {
  auto cfg = tiny_config("/tmp/unused");
  auto sys = TrainSystem::build(cfg);
  auto fn = make_transfer_fn(*sys.model, 7);
  auto x = make_pristine_image(64, 64, 3).tensor();
  auto y_ref = make_pristine_image(64, 64, 4).tensor();
  CHECK(fn(x, y_ref, 0).equal(x));
}

TEST_CASE("evaluation oracles: a perfect transfer scores perfectly") {
  auto manifest = DatasetManifest::load(tiny_data().eval_dir);
  REQUIRE(manifest.triplets.size() == 2);

  TransferFn oracle = [](const torch::Tensor&, const torch::Tensor& y_ref, std::uint64_t) {
    return y_ref;
  };
  auto repro = evaluate_reproduction(manifest, oracle);
  REQUIRE(repro.size() == 2);
  for (const auto& r : repro) {
    CHECK(r.task == "reproduce");
    CHECK(r.ms_ssim == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.ssim == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(std::abs(r.d_perc) < 1e-4);
  }

  // For transfer the oracle returns y1, which is a different degradation
  // draw on different content, so it cannot match y0 perfectly.
  auto trans = evaluate_transfer(manifest, oracle);
  REQUIRE(trans.size() == 2);
  for (const auto& r : trans) {
    CHECK(r.task == "transfer");
    CHECK(r.ms_ssim < 1.0);
    CHECK(std::isfinite(r.d_perc));
  }
}

TEST_CASE("transfer equals reproduction when the references coincide") {
  auto dir = fresh_dir("degenerate_eval");
  auto x0 = make_pristine_image(64, 64, 50);
  auto y0 = make_pristine_image(64, 64, 51);
  save_png(x0, (dir / "x0.png").string());
  save_png(y0, (dir / "y0.png").string());

  DatasetManifest m;
  m.split = "eval";
  m.root = dir.string();
  TripletEntry t;
  t.x0 = "x0.png";
  t.x1 = "x0.png";
  t.y0 = "y0.png";
  t.y1 = "y0.png";
  m.triplets.push_back(t);

  auto cfg = tiny_config("/tmp/unused");
  auto sys = TrainSystem::build(cfg);
  auto fn = make_transfer_fn(*sys.model, 11);
  auto repro = evaluate_reproduction(m, fn);
  auto trans = evaluate_transfer(m, fn);
  REQUIRE(repro.size() == 1);
  REQUIRE(trans.size() == 1);
  CHECK(repro[0].ms_ssim == trans[0].ms_ssim);
  CHECK(repro[0].ssim == trans[0].ssim);
  CHECK(repro[0].d_perc == trans[0].d_perc);
}

TEST_CASE("ablation transfers produce the three grouped tasks") {
  auto manifest = DatasetManifest::load(tiny_data().eval_dir);
  REQUIRE(manifest.quadruplets.size() == 2);

  auto cfg = tiny_config("/tmp/unused");
  auto sys = TrainSystem::build(cfg);
  auto records = evaluate_ablation_transfers(manifest, *sys.model, 13);
  REQUIRE(records.size() == 6);
  for (std::size_t i = 0; i < records.size(); i += 3) {
    CHECK(records[i].task == "direct");
    CHECK(records[i + 1].task == "global-only");
    CHECK(records[i + 2].task == "mixed");
  }
  for (const auto& r : records) {
    CHECK(std::isfinite(r.ms_ssim));
    CHECK(std::isfinite(r.ssim));
    CHECK(std::isfinite(r.d_perc));
  }

  auto summary = summarize(records);
  CHECK(summary["tasks"].contains("direct"));
  CHECK(summary["tasks"].contains("global-only"));
  CHECK(summary["tasks"].contains("mixed"));
}

TEST_CASE("summarize computes the statistics it claims") {
  std::vector<MetricsRecord> records;
  records.push_back({"a", 0.5, 0.4, 1.0});
  records.push_back({"a", 0.7, 0.6, 3.0});
  records.push_back({"a", 0.9, 0.8, 2.0});
  records.push_back({"b", 0.25, 0.25, 0.25});

  auto s = summarize(records);
  CHECK(s["schema_version"] == 1);
  const auto& a = s["tasks"]["a"];
  CHECK(a["count"] == 3);
  CHECK(a["ms_ssim"]["mean"].get<double>() == doctest::Approx(0.7));
  CHECK(a["ms_ssim"]["median"].get<double>() == doctest::Approx(0.7));
  CHECK(a["ms_ssim"]["stddev"].get<double>() == doctest::Approx(0.2));
  CHECK(a["d_perc"]["median"].get<double>() == doctest::Approx(2.0));
  const auto& b = s["tasks"]["b"];
  CHECK(b["count"] == 1);
  CHECK(b["ssim"]["stddev"].get<double>() == doctest::Approx(0.0));

  CHECK_THROWS_AS(summarize({}), InputError);
}

TEST_CASE("disentanglement probe reports accuracies and chance levels") {
  auto src = fresh_dir("probe_corpus");
  write_pristine_corpus(src.string(), 3, 64, 64, 77);
  auto out = fresh_dir("probe_set");
  auto manifest =
      generate_pairs(src.string(), out.string(), 12, PoolConfig::default_pool(), 23);

  auto cfg = tiny_config("/tmp/unused");
  auto sys = TrainSystem::build(cfg);
  auto report = probe_disentanglement(manifest, *sys.model->hden, 31);
  CHECK(report.content_classes == 3);
  CHECK(report.kinds >= 2);
  CHECK(report.kind_chance == doctest::Approx(1.0 / report.kinds));
  CHECK(report.content_chance == doctest::Approx(1.0 / 3));
  CHECK(report.kind_accuracy >= 0.0);
  CHECK(report.kind_accuracy <= 1.0);
  CHECK(report.content_accuracy >= 0.0);
  CHECK(report.content_accuracy <= 1.0);

  // A single content class leaves the content probe undefined.
  auto src1 = fresh_dir("probe_single");
  write_pristine_corpus(src1.string(), 1, 64, 64, 78);
  auto out1 = fresh_dir("probe_single_set");
  auto m1 = generate_pairs(src1.string(), out1.string(), 6, PoolConfig::default_pool(), 24);
  CHECK_THROWS_AS(probe_disentanglement(m1, *sys.model->hden, 31), InputError);
}
