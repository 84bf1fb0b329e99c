#include "lungsynth/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "lungsynth/config.hpp"
#include "lungsynth/error.hpp"
#include "lungsynth/nn/ops.hpp"
#include "lungsynth/nn/optim.hpp"

namespace lungsynth {

namespace {
constexpr const char* kCheckpointMagic = "LUNGSYNTH-SDM-CHECKPOINT-1";
}

std::string to_string(ScheduleShape s) { return s == ScheduleShape::kLinear ? "linear" : "cosine"; }

ScheduleShape parse_schedule_shape(const std::string& text) {
  if (text == "linear") return ScheduleShape::kLinear;
  if (text == "cosine") return ScheduleShape::kCosine;
  throw ConfigError("unknown schedule shape '" + text + "' (expected linear or cosine)");
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw ConfigError("noise schedule needs at least one step");
  NoiseSchedule s;
  double ab = 1.0;
  for (double b : betas) {
    if (!(b > 0.0 && b < 1.0)) throw ConfigError("noise schedule: every beta must lie in (0, 1)");
    ab *= 1.0 - b;
    s.alpha_bars_.push_back(ab);
  }
  s.betas_ = std::move(betas);
  return s;
}

std::size_t NoiseSchedule::index(int t) const {
  if (t < 1 || t > steps()) {
    throw ContractError("timestep " + std::to_string(t) + " outside 1.." + std::to_string(steps()));
  }
  return static_cast<std::size_t>(t - 1);
}

double NoiseSchedule::posterior_variance(int t) const {
  return beta(t) * (1.0 - alpha_bar_prev(t)) / (1.0 - alpha_bar(t));
}

NoiseSchedule make_schedule(int steps, double beta_start, double beta_end, ScheduleShape shape) {
  if (steps < 1) throw ConfigError("schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  if (shape == ScheduleShape::kLinear) {
    for (int t = 1; t <= steps; ++t) {
      const double f = steps == 1 ? 0.0 : static_cast<double>(t - 1) / (steps - 1);
      betas[static_cast<std::size_t>(t - 1)] = beta_start + f * (beta_end - beta_start);
    }
  } else {
    auto f = [steps](double t) {
      const double s = 0.008;
      const double c = std::cos((t / steps + s) / (1.0 + s) * std::numbers::pi / 2.0);
      return c * c;
    };
    for (int t = 1; t <= steps; ++t) {
      const double b = 1.0 - f(t) / f(t - 1);
      betas[static_cast<std::size_t>(t - 1)] = std::clamp(b, beta_start, beta_end);
    }
  }
  return NoiseSchedule::from_betas(std::move(betas));
}

nn::Tensor forward_diffuse(const nn::Tensor& x0, int t, const nn::Tensor& eps, const NoiseSchedule& schedule) {
  if (x0.shape() != eps.shape()) throw ContractError("forward_diffuse: x0 and eps shapes differ");
  const double ab = schedule.alpha_bar(t);
  const auto a = static_cast<float>(std::sqrt(ab));
  const auto b = static_cast<float>(std::sqrt(1.0 - ab));
  nn::Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

nn::Tensor forward_step(const nn::Tensor& x_prev, int t, const nn::Tensor& eps, const NoiseSchedule& schedule) {
  if (x_prev.shape() != eps.shape()) throw ContractError("forward_step: shapes differ");
  const auto a = static_cast<float>(std::sqrt(schedule.alpha(t)));
  const auto b = static_cast<float>(std::sqrt(schedule.beta(t)));
  nn::Tensor out(x_prev.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a * x_prev[i] + b * eps[i];
  return out;
}

nn::Tensor one_hot(std::span<const SemanticLabelMap> maps) {
  if (maps.empty()) throw ContractError("one_hot: no label maps");
  const int h = maps[0].rows(), w = maps[0].cols();
  nn::Tensor out({static_cast<int>(maps.size()), kNumLabels, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t n = 0; n < maps.size(); ++n) {
    if (maps[n].rows() != h || maps[n].cols() != w) throw ContractError("one_hot: label maps differ in shape");
    const auto& raw = maps[n].raw();
    for (std::size_t i = 0; i < plane; ++i) out[(n * kNumLabels + raw[i]) * plane + i] = 1.0f;
  }
  return out;
}

nn::Tensor one_hot(const SemanticLabelMap& map) { return one_hot(std::span<const SemanticLabelMap>(&map, 1)); }

nn::Tensor to_model_range(std::span<const Grid2D<float>> images) {
  if (images.empty()) throw ContractError("to_model_range: no images");
  const int h = images[0].rows(), w = images[0].cols();
  nn::Tensor out({static_cast<int>(images.size()), 1, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (!images[n].same_shape(images[0])) throw ContractError("to_model_range: images differ in shape");
    for (std::size_t i = 0; i < images[n].size(); ++i) out[n * images[n].size() + i] = 2.0f * images[n][i] - 1.0f;
  }
  return out;
}

Grid2D<float> from_model_range(const nn::Tensor& x, int index) {
  const int h = x.dim(2), w = x.dim(3);
  Grid2D<float> g(h, w);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < plane; ++i) {
    g[i] = 0.5f * (std::clamp(x[static_cast<std::size_t>(index) * plane + i], -1.0f, 1.0f) + 1.0f);
  }
  return g;
}

LossSample training_loss(NoisePredictor& denoiser, const nn::Tensor& x0, const nn::Tensor& condition,
                         const NoiseSchedule& schedule, double p_drop, Rng& rng) {
  if (x0.ndim() != 4 || condition.ndim() != 4 || x0.dim(0) != condition.dim(0) || x0.dim(2) != condition.dim(2) ||
      x0.dim(3) != condition.dim(3)) {
    throw ContractError("training_loss: x0 " + x0.shape_string() + " and condition " + condition.shape_string() +
                        " are incompatible");
  }
  const int n = x0.dim(0);
  const std::size_t per = x0.numel() / static_cast<std::size_t>(n);
  const std::size_t cper = condition.numel() / static_cast<std::size_t>(n);
  LossSample out;
  nn::Tensor eps(x0.shape());
  nn::Tensor x_t(x0.shape());
  nn::Tensor cond = condition;
  for (int i = 0; i < n; ++i) {
    const int t = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(schedule.steps())));
    out.timesteps.push_back(t);
    const double ab = schedule.alpha_bar(t);
    const auto a = static_cast<float>(std::sqrt(ab)), b = static_cast<float>(std::sqrt(1.0 - ab));
    for (std::size_t k = 0; k < per; ++k) {
      const auto idx = static_cast<std::size_t>(i) * per + k;
      eps[idx] = static_cast<float>(rng.normal());
      x_t[idx] = a * x0[idx] + b * eps[idx];
    }
    const bool drop = p_drop > 0.0 && rng.uniform() < p_drop;
    out.dropped.push_back(drop);
    if (drop) std::fill_n(cond.data() + static_cast<std::size_t>(i) * cper, cper, 0.0f);
  }
  auto pred = denoiser.predict(nn::constant(std::move(x_t)), out.timesteps, cond);
  if (pred->value.shape() != x0.shape()) throw ContractError("training_loss: denoiser output has the wrong shape");
  out.loss = nn::mse_loss(pred, eps);
  return out;
}

nn::Tensor guided_noise(const nn::Tensor& eps_cond, const nn::Tensor& eps_uncond, double scale) {
  if (eps_cond.shape() != eps_uncond.shape()) throw ContractError("guided_noise: shapes differ");
  nn::Tensor out(eps_cond.shape());
  const auto s = static_cast<float>(scale);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = eps_uncond[i] + s * (eps_cond[i] - eps_uncond[i]);
  return out;
}

Grid2D<float> sample(NoisePredictor& denoiser, const SemanticLabelMap& mask, const NoiseSchedule& schedule,
                     double guidance_scale, Rng& rng) {
  nn::NoGradGuard no_grad;
  const int h = mask.rows(), w = mask.cols();
  const nn::Tensor cond = one_hot(mask);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  nn::Tensor pair_cond({2, kNumLabels, h, w});
  std::copy(cond.values().begin(), cond.values().end(), pair_cond.values().begin());

  nn::Tensor x({1, 1, h, w});
  for (auto& v : x.values()) v = static_cast<float>(rng.normal());
  for (int t = schedule.steps(); t >= 1; --t) {
    nn::Tensor eps;
    if (guidance_scale == 1.0) {
      eps = denoiser.predict(nn::constant(x), {t}, cond)->value;
    } else {
      nn::Tensor xx({2, 1, h, w});
      std::copy(x.values().begin(), x.values().end(), xx.values().begin());
      std::copy(x.values().begin(), x.values().end(), xx.values().begin() + static_cast<std::ptrdiff_t>(plane));
      const auto both = denoiser.predict(nn::constant(std::move(xx)), {t, t}, pair_cond)->value;
      nn::Tensor ec({1, 1, h, w}), eu({1, 1, h, w});
      std::copy_n(both.values().begin(), plane, ec.values().begin());
      std::copy_n(both.values().begin() + static_cast<std::ptrdiff_t>(plane), plane, eu.values().begin());
      eps = guided_noise(ec, eu, guidance_scale);
    }
    const double ab = schedule.alpha_bar(t), abp = schedule.alpha_bar_prev(t);
    const double c0 = std::sqrt(abp) * schedule.beta(t) / (1.0 - ab);
    const double ct = std::sqrt(schedule.alpha(t)) * (1.0 - abp) / (1.0 - ab);
    const double sigma = t > 1 ? std::sqrt(schedule.posterior_variance(t)) : 0.0;
    const double inv_sqrt_ab = 1.0 / std::sqrt(ab), s1 = std::sqrt(1.0 - ab);
    for (std::size_t i = 0; i < plane; ++i) {
      const double x0 = std::clamp((x[i] - s1 * eps[i]) * inv_sqrt_ab, -1.0, 1.0);
      double next = c0 * x0 + ct * x[i];
      if (t > 1) next += sigma * rng.normal();
      if (!std::isfinite(next)) {
        throw NumericalError("sampling produced a non-finite value at step " + std::to_string(t));
      }
      x[i] = static_cast<float>(next);
    }
  }
  return from_model_range(x, 0);
}

void DiffusionTrainConfig::validate() const {
  if (image_size < 32 || (image_size & (image_size - 1)) != 0) {
    throw ConfigError("diffusion.image_size must be a power of two >= 32");
  }
  if (batch_size < 1) throw ConfigError("diffusion.batch_size must be >= 1");
  if (total_steps < 1) throw ConfigError("diffusion.total_steps must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("diffusion.lr must be positive");
  if (!(p_drop >= 0.0 && p_drop <= 1.0)) throw ConfigError("diffusion.p_drop must lie in [0, 1]");
  if (weight_decay < 0.0) throw ConfigError("diffusion.weight_decay must be >= 0");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("diffusion.ema_decay must lie in [0, 1)");
  model.validate();
  if (image_size % model.size_multiple() != 0) {
    throw ConfigError("diffusion.image_size must be divisible by 2^(levels-1)");
  }
  (void)schedule();
}

NoiseSchedule DiffusionTrainConfig::schedule() const {
  return make_schedule(timesteps, beta_start, beta_end, schedule_shape);
}

DiffusionTrainConfig DiffusionTrainConfig::from_config(const Config& cfg) {
  DiffusionTrainConfig c;
  c.image_size = static_cast<int>(cfg.get_int("diffusion.image_size", c.image_size));
  c.batch_size = static_cast<int>(cfg.get_int("diffusion.batch_size", c.batch_size));
  c.total_steps = cfg.get_int("diffusion.total_steps", c.total_steps);
  c.lr = cfg.get_double("diffusion.lr", c.lr);
  c.weight_decay = cfg.get_double("diffusion.weight_decay", c.weight_decay);
  c.ema_decay = cfg.get_double("diffusion.ema_decay", c.ema_decay);
  c.p_drop = cfg.get_double("diffusion.p_drop", c.p_drop);
  c.guidance_scale = cfg.get_double("diffusion.guidance_scale", c.guidance_scale);
  c.timesteps = static_cast<int>(cfg.get_int("diffusion.timesteps", c.timesteps));
  c.beta_start = cfg.get_double("diffusion.beta_start", c.beta_start);
  c.beta_end = cfg.get_double("diffusion.beta_end", c.beta_end);
  c.schedule_shape = parse_schedule_shape(cfg.get_string("diffusion.schedule", to_string(c.schedule_shape)));
  c.sample_every = cfg.get_int("diffusion.sample_every", c.sample_every);
  c.model = DenoiserConfig::from_config(cfg, "diffusion.model");
  c.validate();
  return c;
}

namespace {

Grid2D<float> resize_image(const Grid2D<float>& img, int size) {
  if (img.rows() == size && img.cols() == size) return img;
  Grid2D<float> out(size, size);
  if (img.rows() % size == 0 && img.cols() % size == 0 && img.rows() >= size && img.cols() >= size) {
    const int fr = img.rows() / size, fc = img.cols() / size;
    for (int r = 0; r < size; ++r) {
      for (int c = 0; c < size; ++c) {
        double s = 0.0;
        for (int i = 0; i < fr; ++i) {
          for (int j = 0; j < fc; ++j) s += img(r * fr + i, c * fc + j);
        }
        out(r, c) = static_cast<float>(s / (fr * fc));
      }
    }
    return out;
  }
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      out(r, c) = img(std::min(img.rows() - 1, (2 * r + 1) * img.rows() / (2 * size)),
                      std::min(img.cols() - 1, (2 * c + 1) * img.cols() / (2 * size)));
    }
  }
  return out;
}

SemanticLabelMap resize_labels(const SemanticLabelMap& m, int size) {
  if (m.rows() == size && m.cols() == size) return m;
  SemanticLabelMap out(size, size);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      out.set(r, c, m.at(std::min(m.rows() - 1, (2 * r + 1) * m.rows() / (2 * size)),
                        std::min(m.cols() - 1, (2 * c + 1) * m.cols() / (2 * size))));
    }
  }
  return out;
}

nlohmann::json config_to_json(const DiffusionTrainConfig& c) {
  return {{"image_size", c.image_size},
          {"batch_size", c.batch_size},
          {"total_steps", c.total_steps},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"ema_decay", c.ema_decay},
          {"p_drop", c.p_drop},
          {"guidance_scale", c.guidance_scale},
          {"timesteps", c.timesteps},
          {"beta_start", c.beta_start},
          {"beta_end", c.beta_end},
          {"schedule", to_string(c.schedule_shape)},
          {"sample_every", c.sample_every},
          {"model",
           {{"base_channels", c.model.base_channels},
            {"channel_mult", c.model.channel_mult},
            {"spade_hidden", c.model.spade_hidden},
            {"max_groups", c.model.max_groups},
            {"num_classes", c.model.num_classes}}}};
}

DiffusionTrainConfig config_from_json(const nlohmann::json& j) {
  DiffusionTrainConfig c;
  c.image_size = j.at("image_size");
  c.batch_size = j.at("batch_size");
  c.total_steps = j.at("total_steps");
  c.lr = j.at("lr");
  c.weight_decay = j.at("weight_decay");
  c.ema_decay = j.value("ema_decay", 0.0);
  c.p_drop = j.at("p_drop");
  c.guidance_scale = j.at("guidance_scale");
  c.timesteps = j.at("timesteps");
  c.beta_start = j.at("beta_start");
  c.beta_end = j.at("beta_end");
  c.schedule_shape = parse_schedule_shape(j.at("schedule"));
  c.sample_every = j.at("sample_every");
  const auto& m = j.at("model");
  c.model.base_channels = m.at("base_channels");
  c.model.channel_mult = m.at("channel_mult").get<std::vector<int>>();
  c.model.spade_hidden = m.at("spade_hidden");
  c.model.max_groups = m.at("max_groups");
  c.model.num_classes = m.at("num_classes");
  return c;
}

}  // namespace

SlicePair resize_pair(const SlicePair& pair, int size) {
  SlicePair out = pair;
  out.image = resize_image(pair.image, size);
  out.mask = resize_labels(pair.mask, size);
  return out;
}

DiffusionTrainResult train_diffusion(SemanticUNet& model, const DiffusionTrainConfig& config,
                                     std::span<const SlicePair> corpus, std::uint64_t seed,
                                     const std::function<void(const TrainProgress&)>& on_step,
                                     const std::function<void(long, const Grid2D<float>&)>& on_sample_grid) {
  config.validate();
  if (corpus.empty()) throw ConfigError("train_diffusion: the training corpus is empty");
  const auto schedule = config.schedule();
  const int size = config.image_size;

  std::vector<Grid2D<float>> images;
  std::vector<SemanticLabelMap> masks;
  for (const auto& p : corpus) {
    auto r = resize_pair(p, size);
    images.push_back(std::move(r.image));
    masks.push_back(std::move(r.mask));
  }
  const nn::Tensor all_x = to_model_range(images);
  const nn::Tensor all_c = one_hot(masks);
  const std::size_t xper = static_cast<std::size_t>(size) * size;
  const std::size_t cper = xper * kNumLabels;

  nn::AdamW opt(model.parameters(), {config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
  std::vector<nn::Tensor> ema;
  if (config.ema_decay > 0.0) {
    for (const auto& [name, v] : model.parameters().items()) ema.push_back(v->value);
  }
  Rng rng(seed);
  DiffusionTrainResult result;
  const int b = config.batch_size;
  for (long step = 1; step <= config.total_steps; ++step) {
    nn::Tensor x0({b, 1, size, size});
    nn::Tensor cond({b, kNumLabels, size, size});
    for (int i = 0; i < b; ++i) {
      const auto k = rng.uniform_int(images.size());
      std::copy_n(all_x.data() + k * xper, xper, x0.data() + static_cast<std::size_t>(i) * xper);
      std::copy_n(all_c.data() + k * cper, cper, cond.data() + static_cast<std::size_t>(i) * cper);
    }
    auto ls = training_loss(model, x0, cond, schedule, config.p_drop, rng);
    const double loss = ls.loss->value[0];
    if (!std::isfinite(loss)) {
      throw NumericalError("diffusion training diverged: non-finite loss at step " + std::to_string(step));
    }
    opt.zero_grad();
    nn::backward(ls.loss);
    opt.step();
    if (!ema.empty()) {
      const double d = std::min(config.ema_decay, (1.0 + static_cast<double>(step)) / (10.0 + static_cast<double>(step)));
      const auto& items = model.parameters().items();
      for (std::size_t k = 0; k < items.size(); ++k) {
        const auto& w = items[k].second->value;
        auto& e = ema[k];
        for (std::size_t i = 0; i < e.numel(); ++i) e[i] = static_cast<float>(d * e[i] + (1.0 - d) * w[i]);
      }
    }
    result.losses.push_back(loss);
    if (on_step) on_step({step, loss});
    if (on_sample_grid && config.sample_every > 0 && step % config.sample_every == 0) {
      std::vector<Grid2D<float>> tiles;
      Rng srng(derive_seed(seed, static_cast<std::uint64_t>(step)));
      for (std::size_t k = 0; k < std::min<std::size_t>(4, masks.size()); ++k) {
        tiles.push_back(sample(model, masks[k], schedule, config.guidance_scale, srng));
      }
      on_sample_grid(step, tile_images(tiles, 4));
    }
  }
  if (!ema.empty()) {
    const auto& items = model.parameters().items();
    for (std::size_t k = 0; k < items.size(); ++k) items[k].second->value = std::move(ema[k]);
  }
  return result;
}

void save_checkpoint(const std::filesystem::path& path, const SemanticUNet& model,
                     const DiffusionTrainConfig& config) {
  nlohmann::json header;
  header["config"] = config_to_json(config);
  header["schedule"] = {{"betas", config.schedule().betas()}};
  header["parameters"] = model.parameters().scalar_count();
  nn::write_checkpoint(path, kCheckpointMagic, header.dump(), model.parameters());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  const auto text = nn::read_checkpoint_header(in, kCheckpointMagic, path);
  LoadedCheckpoint ck;
  try {
    const auto header = nlohmann::json::parse(text);
    ck.config = config_from_json(header.at("config"));
    ck.schedule = NoiseSchedule::from_betas(header.at("schedule").at("betas").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": corrupt checkpoint header: " + e.what());
  }
  ck.model = std::make_unique<SemanticUNet>(ck.config.model, 0);
  ck.model->parameters().load(in);
  return ck;
}

Grid2D<float> tile_images(std::span<const Grid2D<float>> images, int columns) {
  if (images.empty()) return {};
  const int h = images[0].rows(), w = images[0].cols();
  const int n = static_cast<int>(images.size());
  const int cols = std::min(columns, n);
  const int rows = (n + cols - 1) / cols;
  Grid2D<float> out(rows * h, cols * w, 0.0f);
  for (int k = 0; k < n; ++k) {
    const auto& img = images[static_cast<std::size_t>(k)];
    if (img.rows() != h || img.cols() != w) throw ContractError("tile_images: images differ in shape");
    const int r0 = (k / cols) * h, c0 = (k % cols) * w;
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) out(r0 + r, c0 + c) = img(r, c);
    }
  }
  return out;
}

}  // namespace lungsynth
