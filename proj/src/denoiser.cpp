#include "lungsynth/denoiser.hpp"

#include <algorithm>
#include <cmath>

#include "lungsynth/config.hpp"
#include "lungsynth/error.hpp"

namespace lungsynth {

using nn::Var;

void DenoiserConfig::validate() const {
  if (base_channels < 1 || spade_hidden < 1 || max_groups < 1) {
    throw ConfigError("denoiser: channel counts must be positive");
  }
  if (channel_mult.empty()) throw ConfigError("denoiser: channel_mult must not be empty");
  for (int m : channel_mult) {
    if (m < 1) throw ConfigError("denoiser: channel_mult entries must be positive");
  }
  if (num_classes < 1) throw ConfigError("denoiser: num_classes must be positive");
}

DenoiserConfig DenoiserConfig::from_config(const Config& cfg, const std::string& section) {
  DenoiserConfig d;
  d.base_channels = static_cast<int>(cfg.get_int(section + ".base_channels", d.base_channels));
  d.channel_mult = cfg.get_int_list(section + ".channel_mult", d.channel_mult);
  d.spade_hidden = static_cast<int>(cfg.get_int(section + ".spade_hidden", d.spade_hidden));
  d.max_groups = static_cast<int>(cfg.get_int(section + ".max_groups", d.max_groups));
  d.validate();
  return d;
}

nn::Tensor timestep_embedding(const std::vector<int>& timesteps, int dim) {
  const int half = dim / 2;
  nn::Tensor out({static_cast<int>(timesteps.size()), dim});
  for (std::size_t n = 0; n < timesteps.size(); ++n) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half));
      const double a = timesteps[n] * freq;
      out[n * dim + i] = static_cast<float>(std::cos(a));
      out[n * dim + half + i] = static_cast<float>(std::sin(a));
    }
  }
  return out;
}

namespace {

// At least four channels per group: with one channel per group the norm
// would erase each sample's mean level, which the noise prediction needs.
int norm_groups(int channels, const DenoiserConfig& c) {
  return nn::group_count(channels, std::min(c.max_groups, std::max(1, channels / 4)));
}

struct SpadeNorm {
  int groups = 1;
  nn::Conv2d shared, gamma, beta;

  SpadeNorm() = default;
  SpadeNorm(nn::ParameterStore& s, const std::string& name, int channels, const DenoiserConfig& c, Rng& rng)
      : groups(norm_groups(channels, c)),
        shared(s, name + ".shared", c.num_classes, c.spade_hidden, 3, 1, 1, rng),
        gamma(s, name + ".gamma", c.spade_hidden, channels, 3, 1, 1, rng),
        beta(s, name + ".beta", c.spade_hidden, channels, 3, 1, 1, rng) {}

  Var operator()(const Var& h, const Var& cond) const {
    auto a = nn::relu(shared(cond));
    return nn::add(nn::mul(nn::group_norm(h, groups), nn::add_scalar(gamma(a), 1.0f)), beta(a));
  }
};

// Residual block; `spade` selects label-modulated normalisation.
struct ResBlock {
  bool spade = false;
  nn::GroupNorm gn1, gn2;
  SpadeNorm sn1, sn2;
  nn::Conv2d conv1, conv2, skip;
  nn::Linear temb;
  bool has_skip = false;

  ResBlock(nn::ParameterStore& s, const std::string& name, int in_ch, int out_ch, int temb_dim, bool use_spade,
           const DenoiserConfig& c, Rng& rng)
      : spade(use_spade) {
    if (spade) {
      sn1 = SpadeNorm(s, name + ".norm1", in_ch, c, rng);
      sn2 = SpadeNorm(s, name + ".norm2", out_ch, c, rng);
    } else {
      gn1 = nn::GroupNorm(s, name + ".norm1", in_ch, norm_groups(in_ch, c));
      gn2 = nn::GroupNorm(s, name + ".norm2", out_ch, norm_groups(out_ch, c));
    }
    conv1 = nn::Conv2d(s, name + ".conv1", in_ch, out_ch, 3, 1, 1, rng);
    temb = nn::Linear(s, name + ".temb", temb_dim, out_ch, rng);
    conv2 = nn::Conv2d(s, name + ".conv2", out_ch, out_ch, 3, 1, 1, rng, /*zero_init=*/true);
    if (in_ch != out_ch) {
      skip = nn::Conv2d(s, name + ".skip", in_ch, out_ch, 1, 1, 0, rng);
      has_skip = true;
    }
  }

  Var operator()(const Var& x, const Var& t_act, const Var& cond) const {
    auto h = spade ? sn1(x, cond) : gn1(x);
    h = conv1(nn::silu(h));
    h = nn::add_channel(h, temb(t_act));
    h = spade ? sn2(h, cond) : gn2(h);
    h = conv2(nn::silu(h));
    return nn::add(has_skip ? skip(x) : x, h);
  }
};

}  // namespace

struct SemanticUNet::Impl {
  nn::Linear time1, time2;
  nn::Conv2d conv_in, conv_out;
  std::vector<ResBlock> encoder;
  std::unique_ptr<ResBlock> mid;
  std::vector<ResBlock> decoder;  // decoder[i] runs at level L-1-i
  SpadeNorm out_norm;
};

SemanticUNet::SemanticUNet(const DenoiserConfig& config, std::uint64_t seed)
    : config_(config), impl_(std::make_unique<Impl>()) {
  config_.validate();
  Rng rng(seed);
  auto& s = params_;
  auto& m = *impl_;
  const int base = config_.base_channels;
  const int temb_dim = 4 * base;
  const int levels = static_cast<int>(config_.channel_mult.size());
  m.time1 = nn::Linear(s, "time.fc1", base, temb_dim, rng);
  m.time2 = nn::Linear(s, "time.fc2", temb_dim, temb_dim, rng);
  m.conv_in = nn::Conv2d(s, "conv_in", 1, base, 3, 1, 1, rng);
  int ch = base;
  std::vector<int> level_ch;
  for (int i = 0; i < levels; ++i) {
    const int out = base * config_.channel_mult[static_cast<std::size_t>(i)];
    m.encoder.emplace_back(s, "enc" + std::to_string(i), ch, out, temb_dim, false, config_, rng);
    level_ch.push_back(out);
    ch = out;
  }
  m.mid = std::make_unique<ResBlock>(s, "mid", ch, ch, temb_dim, true, config_, rng);
  for (int i = levels - 1; i >= 0; --i) {
    const int out = level_ch[static_cast<std::size_t>(i)];
    m.decoder.emplace_back(s, "dec" + std::to_string(i), ch + out, out, temb_dim, true, config_, rng);
    ch = out;
  }
  m.out_norm = SpadeNorm(s, "out_norm", ch, config_, rng);
  m.conv_out = nn::Conv2d(s, "conv_out", ch, 1, 3, 1, 1, rng, /*zero_init=*/true);
}

SemanticUNet::~SemanticUNet() = default;

Var SemanticUNet::predict(const Var& x_t, const std::vector<int>& timesteps, const nn::Tensor& condition) {
  const auto& xv = x_t->value;
  if (xv.ndim() != 4 || xv.dim(1) != 1) throw ContractError("denoiser: x_t must be [N,1,H,W]");
  if (condition.ndim() != 4 || condition.dim(0) != xv.dim(0) || condition.dim(1) != config_.num_classes ||
      condition.dim(2) != xv.dim(2) || condition.dim(3) != xv.dim(3)) {
    throw ContractError("denoiser: condition shape " + condition.shape_string() + " does not match x_t " +
                        xv.shape_string());
  }
  if (static_cast<int>(timesteps.size()) != xv.dim(0)) throw ContractError("denoiser: one timestep per sample");
  const int mult = config_.size_multiple();
  if (xv.dim(2) % mult != 0 || xv.dim(3) % mult != 0) {
    throw ContractError("denoiser: spatial size must be divisible by " + std::to_string(mult));
  }
  auto& m = *impl_;
  const int levels = static_cast<int>(config_.channel_mult.size());

  std::vector<Var> cond_pyramid{nn::constant(condition)};
  for (int i = 1; i < levels; ++i) {
    nn::NoGradGuard ng;
    cond_pyramid.push_back(nn::avg_pool2(cond_pyramid.back()));
  }

  auto temb = nn::constant(timestep_embedding(timesteps, config_.base_channels));
  auto t_act = nn::silu(m.time2(nn::silu(m.time1(temb))));

  auto h = m.conv_in(x_t);
  std::vector<Var> skips;
  for (int i = 0; i < levels; ++i) {
    h = m.encoder[static_cast<std::size_t>(i)](h, t_act, nullptr);
    skips.push_back(h);
    if (i < levels - 1) h = nn::avg_pool2(h);
  }
  h = (*m.mid)(h, t_act, cond_pyramid.back());
  for (int k = 0; k < levels; ++k) {
    const int level = levels - 1 - k;
    h = nn::concat_channels(h, skips[static_cast<std::size_t>(level)]);
    h = m.decoder[static_cast<std::size_t>(k)](h, t_act, cond_pyramid[static_cast<std::size_t>(level)]);
    if (level > 0) h = nn::upsample2(h);
  }
  return m.conv_out(nn::silu(m.out_norm(h, cond_pyramid.front())));
}

}  // namespace lungsynth
