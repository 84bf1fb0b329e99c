#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lungsynth/corpus.hpp"
#include "lungsynth/denoiser.hpp"
#include "lungsynth/nn/tensor.hpp"
#include "lungsynth/rng.hpp"
#include "lungsynth/semantic_masks.hpp"

namespace lungsynth {

class Config;

enum class ScheduleShape { kLinear, kCosine };
std::string to_string(ScheduleShape s);
ScheduleShape parse_schedule_shape(const std::string& text);

// Per-step variances for t = 1..T. All accessors take 1-based t.
class NoiseSchedule {
 public:
  // Validates 0 < beta < 1 for every step.
  static NoiseSchedule from_betas(std::vector<double> betas);

  int steps() const { return static_cast<int>(betas_.size()); }
  double beta(int t) const { return betas_[index(t)]; }
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const { return alpha_bars_[index(t)]; }
  // alpha_bar(t - 1), with alpha_bar(0) = 1.
  double alpha_bar_prev(int t) const { return t == 1 ? 1.0 : alpha_bar(t - 1); }
  // Variance of q(x_{t-1} | x_t, x_0).
  double posterior_variance(int t) const;

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

 private:
  std::size_t index(int t) const;
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
};

// Linear: beta_t interpolates beta_start..beta_end. Cosine: squared-cosine
// alpha_bar with offset 0.008, betas clipped to [beta_start, beta_end].
NoiseSchedule make_schedule(int steps, double beta_start, double beta_end, ScheduleShape shape);

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
nn::Tensor forward_diffuse(const nn::Tensor& x0, int t, const nn::Tensor& eps, const NoiseSchedule& schedule);

// One step of q(x_t | x_{t-1}).
nn::Tensor forward_step(const nn::Tensor& x_prev, int t, const nn::Tensor& eps, const NoiseSchedule& schedule);

// One-hot label map as [6, H, W] (appended to `out`) or a [N, 6, H, W]
// batch.
nn::Tensor one_hot(std::span<const SemanticLabelMap> maps);
nn::Tensor one_hot(const SemanticLabelMap& map);

// Image in [0, 1] to the model range [-1, 1] and back (clamped).
nn::Tensor to_model_range(std::span<const Grid2D<float>> images);
Grid2D<float> from_model_range(const nn::Tensor& x, int index);

struct LossSample {
  nn::Var loss;
  std::vector<int> timesteps;
  std::vector<bool> dropped;  // condition replaced by the null map
};

// Simple epsilon-prediction objective: t ~ U{1..T}, eps ~ N(0, I), MSE
// between eps and the prediction. Each sample's condition is zeroed with
// probability p_drop.
LossSample training_loss(NoisePredictor& denoiser, const nn::Tensor& x0, const nn::Tensor& condition,
                         const NoiseSchedule& schedule, double p_drop, Rng& rng);

// eps_uncond + s (eps_cond - eps_uncond)
nn::Tensor guided_noise(const nn::Tensor& eps_cond, const nn::Tensor& eps_uncond, double scale);

// Ancestral sampling from x_T ~ N(0, I) with fixed posterior variance and
// guided noise; the final step adds no noise. Returns pixels in [0, 1].
// Throws NumericalError naming the step on non-finite values.
Grid2D<float> sample(NoisePredictor& denoiser, const SemanticLabelMap& mask, const NoiseSchedule& schedule,
                     double guidance_scale, Rng& rng);

struct DiffusionTrainConfig {
  int image_size = 256;
  int batch_size = 2;
  long total_steps = 100000;
  double lr = 1e-4;
  double weight_decay = 0.0;
  // Decay of the exponential moving average of the weights; 0 disables it.
  // The average warms up as min(decay, (1 + step) / (10 + step)).
  double ema_decay = 0.9999;
  double p_drop = 0.2;
  double guidance_scale = 1.5;
  int timesteps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  ScheduleShape schedule_shape = ScheduleShape::kLinear;
  long sample_every = 0;  // 0 disables periodic sample grids
  DenoiserConfig model;

  void validate() const;
  NoiseSchedule schedule() const;
  // Keys under [diffusion] and [diffusion.model].
  static DiffusionTrainConfig from_config(const Config& cfg);
};

struct TrainProgress {
  long step = 0;
  double loss = 0.0;
};

struct DiffusionTrainResult {
  std::vector<double> losses;  // one per step
};

// Resizes a pair to size x size (box filter for images when shrinking by an
// integer factor, nearest otherwise; nearest for labels).
SlicePair resize_pair(const SlicePair& pair, int size);

// Runs the optimisation loop. Batches are drawn with the seeded generator.
// Throws NumericalError on a non-finite loss; `losses` up to that point are
// passed to `on_step` first. `on_sample_grid` is called every
// config.sample_every steps when set. With ema_decay > 0 the model holds the
// averaged weights on return.
DiffusionTrainResult train_diffusion(SemanticUNet& model, const DiffusionTrainConfig& config,
                                     std::span<const SlicePair> corpus, std::uint64_t seed,
                                     const std::function<void(const TrainProgress&)>& on_step = {},
                                     const std::function<void(long, const Grid2D<float>&)>& on_sample_grid = {});

// Checkpoint: magic line, JSON header (config + schedule), then weights.
void save_checkpoint(const std::filesystem::path& path, const SemanticUNet& model,
                     const DiffusionTrainConfig& config);

struct LoadedCheckpoint {
  DiffusionTrainConfig config;
  NoiseSchedule schedule;
  std::unique_ptr<SemanticUNet> model;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Tiles images (all the same shape) into one grid image.
Grid2D<float> tile_images(std::span<const Grid2D<float>> images, int columns);

}  // namespace lungsynth
