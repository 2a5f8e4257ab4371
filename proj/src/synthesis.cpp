#include "udm/synthesis.hpp"

#include <string>

namespace udm {

namespace F = torch::nn::functional;

void SynthConfig::validate() const {
  if (map_channels <= 0 || base_width <= 0)
    throw ConfigError("SynthConfig: map_channels and base_width must be positive");
  if (depth < 2) throw ConfigError("SynthConfig: depth must be at least 2");
}

torch::Tensor NoiseState::draw(std::int64_t site, std::int64_t batch, std::int64_t h,
                               std::int64_t w, const torch::TensorOptions& opts) const {
  auto gen = make_generator(mix_seed(seed_, static_cast<std::uint64_t>(site)));
  return torch::randn({batch, 1, h, w}, gen, opts.requires_grad(false));
}

torch::Tensor resample_map(const torch::Tensor& e, std::int64_t h, std::int64_t w) {
  if (e.dim() != 4) throw ShapeError("resample_map: expected [B, C, gh, gw]");
  const auto gh = e.size(2), gw = e.size(3);
  if (gh == h && gw == w) return e;
  if (gh >= h && gw >= w)
    return F::adaptive_avg_pool2d(e, F::AdaptiveAvgPool2dFuncOptions({h, w}));
  auto out = F::interpolate(
      e, F::InterpolateFuncOptions().size(std::vector<std::int64_t>{h, w}).mode(torch::kNearest));
  return out;
}

namespace {

torch::nn::Conv2d strided_conv(std::int64_t in, std::int64_t out) {
  return torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, 3).stride(2).padding(1).bias(false));
}

torch::nn::ConvTranspose2d up_conv(std::int64_t in, std::int64_t out) {
  return torch::nn::ConvTranspose2d(
      torch::nn::ConvTranspose2dOptions(in, out, 4).stride(2).padding(1).bias(false));
}

torch::nn::Conv2d pointwise(std::int64_t in, std::int64_t out) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1));
}

void check_spatial_match(const torch::Tensor& f, const torch::Tensor& e, const char* who) {
  if (f.dim() != 4 || e.dim() != 4)
    throw ShapeError(std::string(who) + ": expected 4-d feature and map tensors");
  if (f.size(0) != e.size(0) || f.size(2) != e.size(2) || f.size(3) != e.size(3))
    throw ShapeError(std::string(who) + ": map " + std::to_string(e.size(2)) + "x" +
                     std::to_string(e.size(3)) + " does not match features " +
                     std::to_string(f.size(2)) + "x" + std::to_string(f.size(3)));
}

}  // namespace

IdaLayer::IdaLayer(std::int64_t channels, std::int64_t map_channels, std::int64_t hidden) {
  if (hidden <= 0) hidden = channels;
  up_e_ = register_module("up_e", up_conv(map_channels, hidden));
  down_e_ = register_module("down_e", strided_conv(hidden, hidden));
  down_f_ = register_module("down_f", strided_conv(channels, hidden));
  out_ = register_module("out", up_conv(hidden, channels));
}

torch::Tensor IdaLayer::forward(const torch::Tensor& f, const torch::Tensor& e) {
  check_spatial_match(f, e, "ida_forward");
  const auto h = f.size(2), w = f.size(3);
  // Map path: pool one level down, deconvolve back up, then stride down with
  // the features. The leading pool keeps the advertised stride-2 geometry of
  // every named operation consistent at both even and odd sizes.
  auto pooled = F::avg_pool2d(pad_to_multiple(e, 2).tensor, F::AvgPool2dFuncOptions(2));
  auto m = crop_to(up_e_->forward(pooled), h, w);
  m = down_e_->forward(m);
  auto g = down_f_->forward(f);
  return crop_to(out_->forward(m * g), h, w);
}

SftLayer::SftLayer(std::int64_t channels, std::int64_t map_channels, std::int64_t site,
                   Activation act)
    : site_(site), act_(act) {
  alpha_hidden_ = register_module("alpha_hidden", pointwise(map_channels, channels));
  alpha_out_ = register_module("alpha_out", pointwise(channels, channels));
  beta_hidden_ = register_module("beta_hidden", pointwise(map_channels + 1, channels));
  beta_out_ = register_module("beta_out", pointwise(channels, channels));
  torch::NoGradGuard ng;
  // Neutral start: alpha == 1, beta == 0.
  alpha_out_->weight.zero_();
  alpha_out_->bias.fill_(1.0);
  beta_out_->weight.zero_();
  beta_out_->bias.zero_();
}

torch::Tensor SftLayer::forward(const torch::Tensor& f, const torch::Tensor& e,
                                const NoiseState* noise) {
  check_spatial_match(f, e, "sft_forward");
  if (noise == nullptr)
    throw StateError("sft_forward: missing noise draw for site " + std::to_string(site_));
  auto alpha = alpha_out_->forward(apply_activation(alpha_hidden_->forward(e), act_));
  auto n = noise->draw(site_, f.size(0), f.size(2), f.size(3), f.options());
  auto beta_in = torch::cat({e, n}, 1);
  auto beta = beta_out_->forward(apply_activation(beta_hidden_->forward(beta_in), act_));
  return alpha * f + beta;
}

IdaSftBlock::IdaSftBlock(std::int64_t channels, std::int64_t map_channels, std::int64_t site,
                         Activation act, bool use_ida) {
  if (use_ida) {
    ida = std::make_shared<IdaLayer>(channels, map_channels);
    register_module("ida", ida);
  }
  sft = std::make_shared<SftLayer>(channels, map_channels, site, act);
  register_module("sft", sft);
}

torch::Tensor IdaSftBlock::forward(const torch::Tensor& f, const torch::Tensor& e,
                                   const NoiseState* noise) {
  auto out = sft->forward(f, e, noise);
  if (ida) out = out + ida->forward(f, e);
  return out;
}

EmbeddingCombiner::EmbeddingCombiner(std::int64_t d_g, std::int64_t c_l,
                                     std::int64_t map_channels)
    : d_g_(d_g), c_l_(c_l) {
  mix_ = register_module("mix", pointwise(d_g + c_l, map_channels));
}

torch::Tensor EmbeddingCombiner::forward(const torch::Tensor& e_g,
                                         const torch::Tensor& e_l) {
  if (e_g.dim() != 2 || e_g.size(1) != d_g_)
    throw ShapeError("combine_embeddings: expected e_g [B, " + std::to_string(d_g_) + "]");
  if (e_l.dim() != 4 || e_l.size(1) != c_l_)
    throw ShapeError("combine_embeddings: expected e_l [B, " + std::to_string(c_l_) +
                     ", gh, gw]");
  if (e_g.size(0) != e_l.size(0))
    throw ShapeError("combine_embeddings: batch mismatch between e_g and e_l");
  auto spread = e_g.unsqueeze(-1).unsqueeze(-1).expand(
      {e_g.size(0), d_g_, e_l.size(2), e_l.size(3)});
  return mix_->forward(torch::cat({spread, e_l}, 1));
}

SynthesisNet::SynthesisNet(SynthConfig cfg, bool use_ida) : cfg_(cfg) {
  cfg_.validate();
  auto width = [&](std::int64_t level) { return cfg_.base_width << level; };
  const auto levels = cfg_.depth;

  stem_ = register_module(
      "stem", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, cfg_.base_width, 3)
                                    .padding(1)
                                    .padding_mode(torch::kReflect)));
  for (std::int64_t l = 0; l < levels; ++l) {
    auto enc = torch::nn::Conv2d(torch::nn::Conv2dOptions(width(l), width(l), 3)
                                     .padding(1)
                                     .padding_mode(torch::kReflect));
    enc_.push_back(register_module("enc_" + std::to_string(l), enc));
    if (l + 1 < levels) {
      auto down = torch::nn::Conv2d(torch::nn::Conv2dOptions(width(l), width(l + 1), 3)
                                        .stride(2)
                                        .padding(1));
      down_.push_back(register_module("down_" + std::to_string(l), down));
    }
  }
  for (std::int64_t l = levels - 2; l >= 0; --l) {
    auto up = torch::nn::ConvTranspose2d(
        torch::nn::ConvTranspose2dOptions(width(l + 1), width(l), 4).stride(2).padding(1));
    up_.push_back(register_module("up_" + std::to_string(l), up));
    auto mix = torch::nn::Conv2d(torch::nn::Conv2dOptions(2 * width(l), width(l), 3)
                                     .padding(1)
                                     .padding_mode(torch::kReflect));
    mix_.push_back(register_module("mix_" + std::to_string(l), mix));
  }
  // Site 0 conditions the bottleneck; later sites the progressively finer
  // decoder levels.
  for (std::int64_t site = 0; site < levels; ++site) {
    const auto level = levels - 1 - site;
    auto block = std::make_shared<IdaSftBlock>(width(level), cfg_.map_channels, site,
                                               cfg_.activation, use_ida);
    blocks_.push_back(block);
    register_module("block_" + std::to_string(site), block);
  }
  head_ = register_module("head",
                          torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg_.base_width, 3, 3)
                                                .padding(1)
                                                .padding_mode(torch::kReflect)));
  torch::NoGradGuard ng;
  head_->weight.zero_();
  head_->bias.zero_();
}

torch::Tensor SynthesisNet::forward(const torch::Tensor& x, const torch::Tensor& e,
                                    const NoiseState* noise) {
  if (x.dim() != 4 || x.size(1) != 3)
    throw ShapeError("synthesize: expected [B, 3, H, W] input");
  if (e.dim() != 4 || e.size(1) != cfg_.map_channels)
    throw ShapeError("synthesize: expected [B, " + std::to_string(cfg_.map_channels) +
                     ", gh, gw] degradation map");
  if (x.size(0) != e.size(0)) throw ShapeError("synthesize: batch mismatch");

  const auto levels = cfg_.depth;
  auto t = apply_activation(stem_->forward(x), cfg_.activation);
  std::vector<torch::Tensor> skips;
  for (std::int64_t l = 0; l + 1 < levels; ++l) {
    t = apply_activation(enc_[static_cast<std::size_t>(l)]->forward(t), cfg_.activation);
    skips.push_back(t);
    t = apply_activation(down_[static_cast<std::size_t>(l)]->forward(t), cfg_.activation);
  }
  t = apply_activation(enc_.back()->forward(t), cfg_.activation);
  check_finite(t, "synthesize.bottleneck");

  t = blocks_[0]->forward(t, resample_map(e, t.size(2), t.size(3)), noise);
  for (std::int64_t l = levels - 2; l >= 0; --l) {
    const auto i = static_cast<std::size_t>(levels - 2 - l);
    const auto& skip = skips[static_cast<std::size_t>(l)];
    auto u = apply_activation(
        crop_to(up_[i]->forward(t), skip.size(2), skip.size(3)), cfg_.activation);
    t = apply_activation(mix_[i]->forward(torch::cat({u, skip}, 1)), cfg_.activation);
    const auto site = static_cast<std::size_t>(levels - 1 - l);
    t = blocks_[site]->forward(t, resample_map(e, t.size(2), t.size(3)), noise);
    check_finite(t, "synthesize.decoder_level_" + std::to_string(l));
  }
  auto out = torch::clamp(x + head_->forward(t), 0.0, 1.0);
  check_finite(out, "synthesize.head");
  return out;
}

DegradationModel::DegradationModel(EncoderConfig enc_cfg, SynthConfig synth_cfg, bool use_ida,
                                   bool use_iden)
    : enc_cfg_(enc_cfg), synth_cfg_(synth_cfg), use_ida_(use_ida), use_iden_(use_iden) {
  enc_cfg_.validate();
  synth_cfg_.validate();
  hden = std::make_shared<Hden>(enc_cfg_);
  register_module("hden", hden);
  if (use_iden_) {
    iden = std::make_shared<Iden>(enc_cfg_);
    register_module("iden", iden);
  }
  combiner = std::make_shared<EmbeddingCombiner>(enc_cfg_.d_g, enc_cfg_.c_l,
                                                 synth_cfg_.map_channels);
  register_module("combiner", combiner);
  synth = std::make_shared<SynthesisNet>(synth_cfg_, use_ida_);
  register_module("synth", synth);
}

torch::Tensor DegradationModel::encode_global(const torch::Tensor& y) {
  return hden->forward(y);
}

torch::Tensor DegradationModel::encode_local(const torch::Tensor& y) {
  if (iden) return iden->forward(y);
  const auto s = enc_cfg_.stride;
  return torch::zeros({y.size(0), enc_cfg_.c_l, (y.size(2) + s - 1) / s,
                       (y.size(3) + s - 1) / s},
                      y.options());
}

torch::Tensor DegradationModel::transfer(const torch::Tensor& x, const torch::Tensor& y_ref,
                                         const NoiseState* noise) {
  auto map = combiner->forward(encode_global(y_ref), encode_local(y_ref));
  return synth->forward(x, map, noise);
}

Image synthesize(const Image& x, const HomEmbedding& e_g, const InhomEmbedding& e_l,
                 const NoiseState& noise, EmbeddingCombiner& combiner, SynthesisNet& net) {
  e_l.validate();
  torch::NoGradGuard ng;
  auto map = combiner.forward(e_g.values, e_l.values);
  auto out = net.forward(x.tensor().unsqueeze(0), map, &noise);
  return Image(out.squeeze(0), x.source_id());
}

}  // namespace udm
