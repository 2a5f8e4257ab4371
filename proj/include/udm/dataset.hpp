#pragma once

#include <string>
#include <vector>

#include "udm/degradation.hpp"
#include "udm/image.hpp"

namespace udm {

// One training pair: y = apply(x, spec, seed). Paths are relative to the
// manifest root.
struct PairEntry {
  std::string pristine;
  std::string distorted;
  DegradationSpec spec;
  std::uint64_t seed = 0;
};

// Evaluation triplet: y0 = apply(x0, spec, seed0), y1 = apply(x1, spec, seed1)
// with x0 != x1 in content and seed0 != seed1.
struct TripletEntry {
  std::string x0, x1;
  std::string y0, y1;
  DegradationSpec spec;
  std::uint64_t seed0 = 0, seed1 = 0;
};

// Ablation quadruplet. spec_a mixes homogeneous stages with one spatially
// varying stage; spec_b is a fresh spatially varying source. Ground truths:
//   gt_global = apply(x0, hom(spec_a))          global-only transfer target
//   gt_mixed  = apply(x0, hom(spec_a)+spec_b)   mixed transfer target
//   y0 itself                                    direct transfer target
struct QuadrupletEntry {
  std::string x0, x1, x2, x3;
  std::string y0, y1, y2, y3;
  std::string gt_global, gt_mixed;
  DegradationSpec spec_a, spec_b;
  std::uint64_t seed_y0 = 0, seed_y1 = 0, seed_y2 = 0, seed_y3 = 0;
  std::uint64_t seed_gt_global = 0, seed_gt_mixed = 0;
};

struct DatasetManifest {
  int schema_version = 1;
  std::string split;  // "train" or "eval"
  std::vector<PairEntry> pairs;
  std::vector<TripletEntry> triplets;
  std::vector<QuadrupletEntry> quadruplets;

  // Directory holding manifest.json; set on load/save, not serialized.
  std::string root;

  std::string resolve(const std::string& relative) const;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);

  void save(const std::string& dir);  // writes <dir>/manifest.json
  static DatasetManifest load(const std::string& dir);
};

// Writes `count` (pristine, distorted) pairs under out_dir along with the
// manifest. Unreadable pristine files are skipped with a warning; zero usable
// images is an input error. Deterministic in seed.
DatasetManifest generate_pairs(const std::string& pristine_dir, const std::string& out_dir,
                               int count, const PoolConfig& pool, std::uint64_t seed);

// Writes `count` evaluation triplets plus `count` ablation quadruplets.
// Requires at least two distinct pristine images.
DatasetManifest generate_eval_sets(const std::string& pristine_dir, const std::string& out_dir,
                                   int count, const PoolConfig& pool, std::uint64_t seed);

// Re-applies every spec in the manifest and compares against the stored
// files; throws StateError on the first mismatch.
void verify_manifest(const DatasetManifest& manifest);

}  // namespace udm
