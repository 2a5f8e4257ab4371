#include "udm/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace udm {

namespace fs = std::filesystem;

namespace {

struct Source {
  Image image;
  std::string relative_path;  // within <out>/pristine
};

std::vector<Source> load_sources(const std::string& pristine_dir) {
  if (!fs::is_directory(pristine_dir))
    throw InputError("pristine directory not found: " + pristine_dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(pristine_dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());

  std::vector<Source> sources;
  for (const auto& f : files) {
    try {
      auto img = load_image(f.string());
      img.require_pipeline_size();
      char name[32];
      std::snprintf(name, sizeof(name), "src_%03d.png", static_cast<int>(sources.size()));
      sources.push_back({std::move(img), std::string("pristine/") + name});
    } catch (const Error& e) {
      std::cerr << "warning: skipping " << f.string() << ": " << e.what() << "\n";
    }
  }
  return sources;
}

void write_sources(const std::vector<Source>& sources, const std::string& out_dir) {
  fs::create_directories(fs::path(out_dir) / "pristine");
  fs::create_directories(fs::path(out_dir) / "distorted");
  for (const auto& s : sources) save_png(s.image, (fs::path(out_dir) / s.relative_path).string());
}

std::string format_name(const char* pattern, int i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, i);
  return buf;
}

nlohmann::json seed_json(std::uint64_t s) { return s; }

}  // namespace

std::string DatasetManifest::resolve(const std::string& relative) const {
  return (fs::path(root) / relative).string();
}

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json j;
  j["schema_version"] = schema_version;
  j["split"] = split;
  j["pairs"] = nlohmann::json::array();
  for (const auto& p : pairs)
    j["pairs"].push_back({{"pristine", p.pristine},
                          {"distorted", p.distorted},
                          {"spec", p.spec.to_json()},
                          {"seed", seed_json(p.seed)}});
  j["triplets"] = nlohmann::json::array();
  for (const auto& t : triplets)
    j["triplets"].push_back({{"x0", t.x0},
                             {"x1", t.x1},
                             {"y0", t.y0},
                             {"y1", t.y1},
                             {"spec", t.spec.to_json()},
                             {"seed0", seed_json(t.seed0)},
                             {"seed1", seed_json(t.seed1)}});
  j["quadruplets"] = nlohmann::json::array();
  for (const auto& q : quadruplets)
    j["quadruplets"].push_back({{"x0", q.x0},
                                {"x1", q.x1},
                                {"x2", q.x2},
                                {"x3", q.x3},
                                {"y0", q.y0},
                                {"y1", q.y1},
                                {"y2", q.y2},
                                {"y3", q.y3},
                                {"gt_global", q.gt_global},
                                {"gt_mixed", q.gt_mixed},
                                {"spec_a", q.spec_a.to_json()},
                                {"spec_b", q.spec_b.to_json()},
                                {"seed_y0", seed_json(q.seed_y0)},
                                {"seed_y1", seed_json(q.seed_y1)},
                                {"seed_y2", seed_json(q.seed_y2)},
                                {"seed_y3", seed_json(q.seed_y3)},
                                {"seed_gt_global", seed_json(q.seed_gt_global)},
                                {"seed_gt_mixed", seed_json(q.seed_gt_mixed)}});
  return j;
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.schema_version = j.at("schema_version").get<int>();
  if (m.schema_version != 1)
    throw IncompatError("unsupported manifest schema version " +
                        std::to_string(m.schema_version));
  m.split = j.at("split").get<std::string>();
  for (const auto& pj : j.value("pairs", nlohmann::json::array())) {
    PairEntry p;
    p.pristine = pj.at("pristine").get<std::string>();
    p.distorted = pj.at("distorted").get<std::string>();
    p.spec = DegradationSpec::from_json(pj.at("spec"));
    p.seed = pj.at("seed").get<std::uint64_t>();
    m.pairs.push_back(std::move(p));
  }
  for (const auto& tj : j.value("triplets", nlohmann::json::array())) {
    TripletEntry t;
    t.x0 = tj.at("x0").get<std::string>();
    t.x1 = tj.at("x1").get<std::string>();
    t.y0 = tj.at("y0").get<std::string>();
    t.y1 = tj.at("y1").get<std::string>();
    t.spec = DegradationSpec::from_json(tj.at("spec"));
    t.seed0 = tj.at("seed0").get<std::uint64_t>();
    t.seed1 = tj.at("seed1").get<std::uint64_t>();
    m.triplets.push_back(std::move(t));
  }
  for (const auto& qj : j.value("quadruplets", nlohmann::json::array())) {
    QuadrupletEntry q;
    q.x0 = qj.at("x0").get<std::string>();
    q.x1 = qj.at("x1").get<std::string>();
    q.x2 = qj.at("x2").get<std::string>();
    q.x3 = qj.at("x3").get<std::string>();
    q.y0 = qj.at("y0").get<std::string>();
    q.y1 = qj.at("y1").get<std::string>();
    q.y2 = qj.at("y2").get<std::string>();
    q.y3 = qj.at("y3").get<std::string>();
    q.gt_global = qj.at("gt_global").get<std::string>();
    q.gt_mixed = qj.at("gt_mixed").get<std::string>();
    q.spec_a = DegradationSpec::from_json(qj.at("spec_a"));
    q.spec_b = DegradationSpec::from_json(qj.at("spec_b"));
    q.seed_y0 = qj.at("seed_y0").get<std::uint64_t>();
    q.seed_y1 = qj.at("seed_y1").get<std::uint64_t>();
    q.seed_y2 = qj.at("seed_y2").get<std::uint64_t>();
    q.seed_y3 = qj.at("seed_y3").get<std::uint64_t>();
    q.seed_gt_global = qj.at("seed_gt_global").get<std::uint64_t>();
    q.seed_gt_mixed = qj.at("seed_gt_mixed").get<std::uint64_t>();
    m.quadruplets.push_back(std::move(q));
  }
  return m;
}

void DatasetManifest::save(const std::string& dir) {
  fs::create_directories(dir);
  root = dir;
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw IoError("cannot write manifest in " + dir);
  out << to_json().dump(2) << "\n";
}

DatasetManifest DatasetManifest::load(const std::string& dir) {
  auto path = fs::path(dir) / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest JSON: " + std::string(e.what()));
  }
  auto m = from_json(j);
  m.root = dir;
  return m;
}

DatasetManifest generate_pairs(const std::string& pristine_dir, const std::string& out_dir,
                               int count, const PoolConfig& pool, std::uint64_t seed) {
  pool.validate();
  if (count <= 0) throw ConfigError("generate_pairs: count must be positive");
  auto sources = load_sources(pristine_dir);
  if (sources.empty()) throw InputError("no usable pristine images in " + pristine_dir);

  const auto n = sources.size();
  const auto used = std::min<std::size_t>(n, static_cast<std::size_t>(count));
  std::vector<Source> written(sources.begin(), sources.begin() + used);
  write_sources(written, out_dir);

  DatasetManifest m;
  m.split = "train";
  for (int i = 0; i < count; ++i) {
    const auto& src = sources[static_cast<std::size_t>(i) % used];
    PairEntry p;
    p.spec = sample_pipeline(pool, mix_seed(seed, static_cast<std::uint64_t>(i), 1));
    p.seed = mix_seed(seed, static_cast<std::uint64_t>(i), 2);
    p.pristine = src.relative_path;
    p.distorted = "distorted/" + format_name("pair_%05d.png", i);
    auto y = apply_degradation(src.image, p.spec, p.seed);
    save_png(y, (fs::path(out_dir) / p.distorted).string());
    m.pairs.push_back(std::move(p));
  }
  m.save(out_dir);
  return m;
}

DatasetManifest generate_eval_sets(const std::string& pristine_dir, const std::string& out_dir,
                                   int count, const PoolConfig& pool, std::uint64_t seed) {
  pool.validate();
  if (count <= 0) throw ConfigError("generate_eval_sets: count must be positive");
  auto sources = load_sources(pristine_dir);
  if (sources.size() < 2)
    throw InputError("eval sets need at least 2 pristine images, found " +
                     std::to_string(sources.size()));
  write_sources(sources, out_dir);
  const auto n = sources.size();

  DatasetManifest m;
  m.split = "eval";

  for (int i = 0; i < count; ++i) {
    const auto e_seed = mix_seed(seed, static_cast<std::uint64_t>(i), 10);
    TripletEntry t;
    t.spec = sample_pipeline(pool, mix_seed(e_seed, 1));
    const auto& s0 = sources[(2 * static_cast<std::size_t>(i)) % n];
    const auto& s1 = sources[(2 * static_cast<std::size_t>(i) + 1) % n];
    t.x0 = s0.relative_path;
    t.x1 = s1.relative_path;
    t.seed0 = mix_seed(e_seed, 2);
    t.seed1 = mix_seed(e_seed, 3);
    t.y0 = "distorted/" + format_name("tri_%04d_y0.png", i);
    t.y1 = "distorted/" + format_name("tri_%04d_y1.png", i);
    save_png(apply_degradation(s0.image, t.spec, t.seed0),
             (fs::path(out_dir) / t.y0).string());
    save_png(apply_degradation(s1.image, t.spec, t.seed1),
             (fs::path(out_dir) / t.y1).string());
    m.triplets.push_back(std::move(t));
  }

  auto hom_pool = PoolConfig::homogeneous_pool();
  hom_pool.arity_weights = {1, 1};
  auto inhom_pool = PoolConfig::inhomogeneous_pool();
  inhom_pool.arity_weights = {1};

  for (int i = 0; i < count; ++i) {
    const auto q_seed = mix_seed(seed, static_cast<std::uint64_t>(i), 20);
    QuadrupletEntry q;
    auto spec_h = sample_pipeline(hom_pool, mix_seed(q_seed, 1));
    auto spec_ia = sample_pipeline(inhom_pool, mix_seed(q_seed, 2));
    q.spec_b = sample_pipeline(inhom_pool, mix_seed(q_seed, 3));
    DegradationSpec a = spec_h;
    a.stages.insert(a.stages.end(), spec_ia.stages.begin(), spec_ia.stages.end());
    q.spec_a = a.canonicalized();

    const Source* xs[4];
    for (int k = 0; k < 4; ++k)
      xs[k] = &sources[(4 * static_cast<std::size_t>(i) + k) % n];
    q.x0 = xs[0]->relative_path;
    q.x1 = xs[1]->relative_path;
    q.x2 = xs[2]->relative_path;
    q.x3 = xs[3]->relative_path;

    q.seed_y0 = mix_seed(q_seed, 4);
    q.seed_y1 = mix_seed(q_seed, 5);
    q.seed_y2 = mix_seed(q_seed, 6);
    q.seed_y3 = mix_seed(q_seed, 7);
    q.seed_gt_global = mix_seed(q_seed, 8);
    q.seed_gt_mixed = mix_seed(q_seed, 9);

    auto hom_a = q.spec_a.homogeneous_part();
    DegradationSpec mixed = hom_a;
    mixed.stages.insert(mixed.stages.end(), q.spec_b.stages.begin(), q.spec_b.stages.end());
    mixed = mixed.canonicalized();

    q.y0 = "distorted/" + format_name("quad_%04d_y0.png", i);
    q.y1 = "distorted/" + format_name("quad_%04d_y1.png", i);
    q.y2 = "distorted/" + format_name("quad_%04d_y2.png", i);
    q.y3 = "distorted/" + format_name("quad_%04d_y3.png", i);
    q.gt_global = "distorted/" + format_name("quad_%04d_gtg.png", i);
    q.gt_mixed = "distorted/" + format_name("quad_%04d_gtm.png", i);

    save_png(apply_degradation(xs[0]->image, q.spec_a, q.seed_y0),
             (fs::path(out_dir) / q.y0).string());
    save_png(apply_degradation(xs[1]->image, q.spec_a, q.seed_y1),
             (fs::path(out_dir) / q.y1).string());
    save_png(apply_degradation(xs[2]->image, hom_a, q.seed_y2),
             (fs::path(out_dir) / q.y2).string());
    save_png(apply_degradation(xs[3]->image, q.spec_b, q.seed_y3),
             (fs::path(out_dir) / q.y3).string());
    save_png(apply_degradation(xs[0]->image, hom_a, q.seed_gt_global),
             (fs::path(out_dir) / q.gt_global).string());
    save_png(apply_degradation(xs[0]->image, mixed, q.seed_gt_mixed),
             (fs::path(out_dir) / q.gt_mixed).string());

    m.quadruplets.push_back(std::move(q));
  }

  m.save(out_dir);
  return m;
}

namespace {

void check_reproduces(const DatasetManifest& m, const std::string& pristine_rel,
                      const DegradationSpec& spec, std::uint64_t seed,
                      const std::string& distorted_rel) {
  auto x = load_image(m.resolve(pristine_rel));
  auto expect = load_image(m.resolve(distorted_rel));
  auto y = apply_degradation(x, spec, seed);
  if (y.to_u8_rgb() != expect.to_u8_rgb())
    throw StateError("manifest mismatch: " + distorted_rel +
                     " is not reproduced by its recorded (spec, seed)");
}

}  // namespace

void verify_manifest(const DatasetManifest& m) {
  for (const auto& p : m.pairs) check_reproduces(m, p.pristine, p.spec, p.seed, p.distorted);
  for (const auto& t : m.triplets) {
    check_reproduces(m, t.x0, t.spec, t.seed0, t.y0);
    check_reproduces(m, t.x1, t.spec, t.seed1, t.y1);
  }
  for (const auto& q : m.quadruplets) {
    auto hom_a = q.spec_a.homogeneous_part();
    DegradationSpec mixed = hom_a;
    mixed.stages.insert(mixed.stages.end(), q.spec_b.stages.begin(), q.spec_b.stages.end());
    mixed = mixed.canonicalized();
    check_reproduces(m, q.x0, q.spec_a, q.seed_y0, q.y0);
    check_reproduces(m, q.x1, q.spec_a, q.seed_y1, q.y1);
    check_reproduces(m, q.x2, hom_a, q.seed_y2, q.y2);
    check_reproduces(m, q.x3, q.spec_b, q.seed_y3, q.y3);
    check_reproduces(m, q.x0, hom_a, q.seed_gt_global, q.gt_global);
    check_reproduces(m, q.x0, mixed, q.seed_gt_mixed, q.gt_mixed);
  }
}

}  // namespace udm
