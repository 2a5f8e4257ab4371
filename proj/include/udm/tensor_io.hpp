#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "udm/common.hpp"

namespace udm {

// Single-file binary container for named tensors: 8-byte magic, u64 header
// length, JSON header (format version, caller extra, tensor directory, blob
// directory), raw little-endian tensor payloads, opaque blobs. Writing is
// atomic (temp file + rename); a load of a save restores bytes exactly.
struct TensorContainerData {
  nlohmann::json extra;
  std::map<std::string, torch::Tensor> tensors;
  std::map<std::string, std::string> blobs;
};

void save_tensor_container(const std::string& path, const std::string& magic,
                           const nlohmann::json& extra,
                           const std::vector<std::pair<std::string, torch::Tensor>>& tensors,
                           const std::map<std::string, std::string>& blobs = {});

// Throws IoError on open/truncation failures and IncompatError on magic,
// version, or header problems. `magic` must be the writer's 8-byte tag.
TensorContainerData load_tensor_container(const std::string& path,
                                          const std::string& magic);

// Copies `src` into the destination tensors by name. Requires an exact
// match in both directions and per-tensor shape/dtype agreement; throws
// IncompatError naming the offender otherwise.
void restore_named_tensors(const std::map<std::string, torch::Tensor>& src,
                           const std::vector<std::pair<std::string, torch::Tensor>>& dst,
                           const std::string& what);

// Parameters and buffers of a module, prefixed "<prefix>/"; buffers get a
// "#buf" suffix so both kinds can share one directory.
void collect_named_tensors(const std::string& prefix, const torch::nn::Module& m,
                           std::vector<std::pair<std::string, torch::Tensor>>& out);

}  // namespace udm
