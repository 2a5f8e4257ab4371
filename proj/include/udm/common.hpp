#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace udm {

// Error taxonomy; the CLI maps these onto its exit-code contract.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct InputError : Error {
  using Error::Error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct SizeError : Error {
  using Error::Error;
};
struct StateError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct CapacityError : Error {
  using Error::Error;
};
struct DivergenceError : Error {
  using Error::Error;
};
struct IncompatError : Error {
  using Error::Error;
};

// splitmix64 step; the basis of all derived seed streams.
std::uint64_t splitmix64(std::uint64_t x);

// Derives an independent child seed from a parent seed and a stream tag.
// Every random draw in the project comes from a generator seeded through
// this function, so any (seed, tag...) pair names a reproducible stream.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag);
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag_a, std::uint64_t tag_b);

// Fresh CPU generator for a derived stream.
torch::Generator make_generator(std::uint64_t seed);

// Minimal counter-based RNG for scalar draws (pipeline sampling, shuffles).
// Portable: the stream depends only on the seed, never on call-site types.
class SplitMix {
 public:
  explicit SplitMix(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next_u64() { return splitmix64(state_++); }
  // Uniform in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }
  // Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  // Index into a discrete distribution given non-negative weights.
  std::size_t weighted_index(const std::vector<double>& weights);
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

// Throws NumericError naming `where` if t contains NaN or Inf.
void check_finite(const torch::Tensor& t, const std::string& where);

// Reflect-pads the last two dims so both are multiples of m. Returns the
// padded tensor plus the original sizes for later cropping.
struct Padded {
  torch::Tensor tensor;
  std::int64_t orig_h = 0;
  std::int64_t orig_w = 0;
};
Padded pad_to_multiple(const torch::Tensor& t, std::int64_t m);
torch::Tensor crop_to(const torch::Tensor& t, std::int64_t h, std::int64_t w);

// Single-threaded, deterministic torch session setup. Call once per process.
void init_runtime();

}  // namespace udm
