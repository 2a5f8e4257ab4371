#include "udm/common.hpp"

#include <ATen/Parallel.h>

namespace udm {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(splitmix64(seed) ^ (0x9E3779B97F4A7C15ULL + tag));
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag_a, std::uint64_t tag_b) {
  return mix_seed(mix_seed(seed, tag_a), tag_b);
}

torch::Generator make_generator(std::uint64_t seed) {
  auto gen = at::detail::createCPUGenerator();
  gen.set_current_seed(seed);
  return gen;
}

std::int64_t SplitMix::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw ConfigError("uniform_int: empty range");
  auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<std::int64_t>(next_u64() % span);
}

std::size_t SplitMix::weighted_index(const std::vector<double>& weights) {
  double total = 0;
  for (double w : weights) {
    if (w < 0) throw ConfigError("weighted_index: negative weight");
    total += w;
  }
  if (total <= 0) throw ConfigError("weighted_index: all weights zero");
  double u = next_double() * total;
  double acc = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  return weights.size() - 1;
}

void check_finite(const torch::Tensor& t, const std::string& where) {
  if (!torch::isfinite(t).all().item<bool>()) {
    throw NumericError("non-finite values in " + where);
  }
}

Padded pad_to_multiple(const torch::Tensor& t, std::int64_t m) {
  const auto h = t.size(-2);
  const auto w = t.size(-1);
  const auto ph = (m - h % m) % m;
  const auto pw = (m - w % m) % m;
  Padded out{t, h, w};
  if (ph > 0 || pw > 0) {
    namespace F = torch::nn::functional;
    out.tensor = F::pad(t.dim() == 3 ? t.unsqueeze(0) : t,
                        F::PadFuncOptions({0, pw, 0, ph}).mode(torch::kReflect));
    if (t.dim() == 3) out.tensor = out.tensor.squeeze(0);
  }
  return out;
}

torch::Tensor crop_to(const torch::Tensor& t, std::int64_t h, std::int64_t w) {
  using torch::indexing::Slice;
  return t.index({torch::indexing::Ellipsis, Slice(0, h), Slice(0, w)});
}

void init_runtime() {
  at::set_num_threads(1);
  at::set_num_interop_threads(1);
  torch::manual_seed(0);
}

}  // namespace udm
