#include "udm/entropy.hpp"

#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace udm {

void DensityConfig::validate() const {
  if (channels <= 0 || stages <= 0 || hidden <= 0)
    throw ConfigError("DensityConfig: channels, stages, and hidden must be positive");
}

FactorizedDensity::FactorizedDensity(DensityConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  auto gen = make_generator(seed);
  const auto opts = torch::kFloat32;
  // softplus(raw) == 1 at init, so the chain starts as a gentle sigmoid ramp.
  const double raw_unit = std::log(std::expm1(1.0));
  for (std::int64_t k = 0; k < cfg_.stages; ++k) {
    const std::int64_t in = (k == 0) ? 1 : cfg_.hidden;
    const std::int64_t out = (k == cfg_.stages - 1) ? 1 : cfg_.hidden;
    auto scale = torch::full({cfg_.channels, out, in}, raw_unit, opts);
    auto shift = torch::rand({cfg_.channels, out, 1}, gen, opts) - 0.5;
    raw_scale_.push_back(register_parameter("scale_" + std::to_string(k), scale));
    shift_.push_back(register_parameter("shift_" + std::to_string(k), shift));
    if (k + 1 < cfg_.stages) {
      auto gate = torch::zeros({cfg_.channels, out, 1}, opts);
      gate_.push_back(register_parameter("gate_" + std::to_string(k), gate));
    }
  }
}

torch::Tensor FactorizedDensity::values_to_cn(const torch::Tensor& values) const {
  if (values.dim() != 2 || values.size(0) != cfg_.channels)
    throw ShapeError("FactorizedDensity: expected values shaped [" +
                     std::to_string(cfg_.channels) + ", N], got " +
                     std::to_string(values.dim()) + "-d input");
  return values;
}

torch::Tensor FactorizedDensity::cdf(const torch::Tensor& values) const {
  auto x = values_to_cn(values).unsqueeze(1);  // [C, 1, N]
  for (std::size_t k = 0; k < raw_scale_.size(); ++k) {
    x = torch::matmul(torch::softplus(raw_scale_[k]).to(x.dtype()), x) +
        shift_[k].to(x.dtype());
    if (k + 1 < raw_scale_.size()) {
      // Bounded gate keeps each stage strictly increasing: d/dx >= 1 - |tanh g|.
      x = x + torch::tanh(gate_[k]).to(x.dtype()) * torch::tanh(x);
    }
  }
  return torch::sigmoid(x).squeeze(1);
}

torch::Tensor FactorizedDensity::bits(const torch::Tensor& values,
                                      torch::Generator* noise_gen) const {
  auto v = values_to_cn(values);
  if (noise_gen != nullptr)
    v = v + torch::rand(v.sizes(), *noise_gen, v.options()) - 0.5;
  auto mass = (cdf(v + 0.5) - cdf(v - 0.5)).clamp_min(1e-12);
  return -torch::log2(mass);
}

void FactorizedDensity::fit(const torch::Tensor& samples, const FitOptions& opts) {
  auto s = values_to_cn(samples).detach().to(torch::kFloat32);
  const auto n = s.size(1);
  if (n == 0) throw InputError("FactorizedDensity::fit: empty sample set");
  torch::optim::Adam optim(parameters(), torch::optim::AdamOptions(opts.lr));
  auto pick_gen = make_generator(mix_seed(opts.seed, 0xF17));
  auto noise_gen = make_generator(mix_seed(opts.seed, 0x0153));
  for (std::int64_t step = 0; step < opts.steps; ++step) {
    torch::Tensor batch = s;
    if (n > opts.batch) {
      auto idx = torch::randint(0, n, {opts.batch}, pick_gen,
                                torch::TensorOptions(torch::kLong));
      batch = s.index_select(1, idx);
    }
    optim.zero_grad();
    auto loss = bits(batch, &noise_gen).mean();
    loss.backward();
    optim.step();
  }
}

namespace {

torch::Tensor batch_to_cn(const torch::Tensor& e, std::int64_t channel_dim) {
  return e.transpose(0, channel_dim).flatten(1);
}

}  // namespace

torch::Tensor rate_loss_global(const torch::Tensor& e_g, const FactorizedDensity& density,
                               torch::Generator* noise_gen) {
  if (e_g.dim() != 2)
    throw ShapeError("rate_loss_global: expected [B, D] embeddings");
  if (e_g.size(0) == 0) throw InputError("rate_loss_global: empty batch");
  if (e_g.size(1) != density.channels())
    throw ShapeError("rate_loss_global: embedding dim " + std::to_string(e_g.size(1)) +
                     " does not match density channels " +
                     std::to_string(density.channels()));
  auto b = density.bits(batch_to_cn(e_g, 1), noise_gen);  // [D, B]
  return b.sum(0).mean();
}

torch::Tensor rate_loss_local(const torch::Tensor& e_l, const FactorizedDensity& density,
                              torch::Generator* noise_gen) {
  if (e_l.dim() != 4)
    throw ShapeError("rate_loss_local: expected [B, C, h, w] embedding grids");
  if (e_l.size(0) == 0) throw InputError("rate_loss_local: empty batch");
  if (e_l.size(1) != density.channels())
    throw ShapeError("rate_loss_local: grid channels " + std::to_string(e_l.size(1)) +
                     " do not match density channels " +
                     std::to_string(density.channels()));
  const auto batch = e_l.size(0);
  auto b = density.bits(batch_to_cn(e_l, 1), noise_gen);  // [C, B*h*w]
  return b.sum() / static_cast<double>(batch);
}

TotalCorrelation total_correlation_oracle(const torch::Tensor& samples) {
  if (samples.dim() != 2) throw ShapeError("total_correlation_oracle: expected [N, D]");
  const auto n = samples.size(0);
  const auto dims = samples.size(1);
  if (n == 0) throw InputError("total_correlation_oracle: empty batch");
  if (dims > 4)
    throw CapacityError("total_correlation_oracle: at most 4 dimensions, got " +
                        std::to_string(dims));
  auto s = samples.to(torch::kLong).contiguous();
  const auto* data = s.data_ptr<std::int64_t>();

  // Remap each dimension's values to dense symbol indices.
  std::vector<std::map<std::int64_t, int>> alphabet(dims);
  std::vector<int> sym(static_cast<std::size_t>(n * dims));
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t d = 0; d < dims; ++d) {
      auto& dict = alphabet[d];
      auto [it, inserted] = dict.emplace(data[i * dims + d], static_cast<int>(dict.size()));
      if (inserted && dict.size() > 8)
        throw CapacityError("total_correlation_oracle: more than 8 symbols in dimension " +
                            std::to_string(d));
      sym[static_cast<std::size_t>(i * dims + d)] = it->second;
    }
  }

  std::int64_t joint_bins = 1;
  for (std::int64_t d = 0; d < dims; ++d)
    joint_bins *= static_cast<std::int64_t>(alphabet[d].size());
  std::vector<double> joint(static_cast<std::size_t>(joint_bins), 0.0);
  std::vector<std::vector<double>> marg(dims);
  for (std::int64_t d = 0; d < dims; ++d) marg[d].assign(alphabet[d].size(), 0.0);

  const double w = 1.0 / static_cast<double>(n);
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t idx = 0;
    for (std::int64_t d = 0; d < dims; ++d) {
      const int v = sym[static_cast<std::size_t>(i * dims + d)];
      idx = idx * static_cast<std::int64_t>(alphabet[d].size()) + v;
      marg[d][static_cast<std::size_t>(v)] += w;
    }
    joint[static_cast<std::size_t>(idx)] += w;
  }

  auto entropy = [](const std::vector<double>& p) {
    double h = 0;
    for (double q : p)
      if (q > 0) h -= q * std::log2(q);
    return h;
  };

  TotalCorrelation tc;
  for (std::int64_t d = 0; d < dims; ++d) tc.sum_marginal_entropy += entropy(marg[d]);
  tc.joint_entropy = entropy(joint);

  // KL to the product of marginals, counted directly rather than inferred
  // from the two entropies, so the decomposition identity is testable.
  for (std::int64_t idx = 0; idx < joint_bins; ++idx) {
    const double p = joint[static_cast<std::size_t>(idx)];
    if (p <= 0) continue;
    double q = 1.0;
    std::int64_t rem = idx;
    for (std::int64_t d = dims - 1; d >= 0; --d) {
      const auto size = static_cast<std::int64_t>(alphabet[d].size());
      q *= marg[d][static_cast<std::size_t>(rem % size)];
      rem /= size;
    }
    tc.kl_to_product += p * std::log2(p / q);
  }
  return tc;
}

}  // namespace udm
