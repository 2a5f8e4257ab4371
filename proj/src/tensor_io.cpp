#include "udm/tensor_io.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

namespace udm {

namespace {

constexpr int kContainerVersion = 1;

const char* dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    case torch::kInt32: return "i32";
    case torch::kUInt8: return "u8";
    case torch::kBool: return "b8";
    default: throw IncompatError("container: unsupported tensor dtype");
  }
}

torch::ScalarType dtype_from_name(const std::string& n) {
  if (n == "f32") return torch::kFloat32;
  if (n == "f64") return torch::kFloat64;
  if (n == "i64") return torch::kInt64;
  if (n == "i32") return torch::kInt32;
  if (n == "u8") return torch::kUInt8;
  if (n == "b8") return torch::kBool;
  throw IncompatError("container: unknown tensor dtype tag: " + n);
}

}  // namespace

void save_tensor_container(const std::string& path, const std::string& magic,
                           const nlohmann::json& extra,
                           const std::vector<std::pair<std::string, torch::Tensor>>& tensors,
                           const std::map<std::string, std::string>& blobs) {
  if (magic.size() != 8) throw StateError("container: magic must be 8 bytes");

  nlohmann::json header;
  header["container_version"] = kContainerVersion;
  header["extra"] = extra;

  std::vector<torch::Tensor> payloads;
  payloads.reserve(tensors.size());
  std::uint64_t offset = 0;
  auto& dir = header["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : tensors) {
    auto flat = t.detach().to(torch::kCPU).contiguous();
    const auto nbytes = static_cast<std::uint64_t>(flat.numel() * flat.element_size());
    dir.push_back({{"name", name},
                   {"dtype", dtype_name(flat.scalar_type())},
                   {"shape", std::vector<std::int64_t>(t.sizes().begin(), t.sizes().end())},
                   {"offset", offset},
                   {"nbytes", nbytes}});
    payloads.push_back(flat);
    offset += nbytes;
  }
  auto& blob_dir = header["blobs"] = nlohmann::json::array();
  for (const auto& [name, bytes] : blobs) {
    blob_dir.push_back({{"name", name}, {"offset", offset}, {"nbytes", bytes.size()}});
    offset += bytes.size();
  }

  const std::string header_text = header.dump();
  const auto tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("container: cannot write " + tmp);
    f.write(magic.data(), 8);
    const std::uint64_t hlen = header_text.size();
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& t : payloads)
      f.write(static_cast<const char*>(t.data_ptr()),
              static_cast<std::streamsize>(t.numel() * t.element_size()));
    for (const auto& [name, bytes] : blobs)
      f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("container: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

TensorContainerData load_tensor_container(const std::string& path,
                                          const std::string& magic) {
  if (magic.size() != 8) throw StateError("container: magic must be 8 bytes");
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("container: cannot open " + path);

  char tag[8];
  f.read(tag, sizeof(tag));
  if (!f || std::memcmp(tag, magic.data(), 8) != 0)
    throw IncompatError("container: bad magic in " + path);
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!f) throw IoError("container: truncated header in " + path);
  std::string header_text(hlen, '\0');
  f.read(header_text.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw IoError("container: truncated header in " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw IncompatError(std::string("container: unparsable header: ") + e.what());
  }
  if (header.value("container_version", -1) != kContainerVersion)
    throw IncompatError("container: unsupported version in " + path);

  std::string payload((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  TensorContainerData data;
  data.extra = header.value("extra", nlohmann::json());
  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    auto dtype = dtype_from_name(entry.at("dtype").get<std::string>());
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
    if (offset + nbytes > payload.size())
      throw IncompatError("container: payload out of range for " + name);
    auto src = torch::from_blob(const_cast<char*>(payload.data() + offset), shape,
                                torch::TensorOptions(dtype));
    data.tensors[name] = src.clone();
  }
  for (const auto& entry : header.at("blobs")) {
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
    if (offset + nbytes > payload.size())
      throw IncompatError("container: blob out of range");
    data.blobs[entry.at("name").get<std::string>()] = payload.substr(offset, nbytes);
  }
  return data;
}

void restore_named_tensors(const std::map<std::string, torch::Tensor>& src,
                           const std::vector<std::pair<std::string, torch::Tensor>>& dst,
                           const std::string& what) {
  torch::NoGradGuard ng;
  std::map<std::string, bool> used;
  for (const auto& [name, value] : src) used[name] = false;
  for (const auto& [name, target] : dst) {
    auto it = src.find(name);
    if (it == src.end()) throw IncompatError(what + ": missing tensor " + name);
    const auto& value = it->second;
    if (value.scalar_type() != target.scalar_type() || value.sizes() != target.sizes())
      throw IncompatError(what + ": shape/dtype mismatch for " + name);
    target.copy_(value);
    used[name] = true;
  }
  for (const auto& [name, was_used] : used)
    if (!was_used) throw IncompatError(what + ": tensor not in model: " + name);
}

void collect_named_tensors(const std::string& prefix, const torch::nn::Module& m,
                           std::vector<std::pair<std::string, torch::Tensor>>& out) {
  for (const auto& p : m.named_parameters(/*recurse=*/true))
    out.emplace_back(prefix + "/" + p.key(), p.value());
  for (const auto& b : m.named_buffers(/*recurse=*/true))
    out.emplace_back(prefix + "/" + b.key() + "#buf", b.value());
}

}  // namespace udm
