#pragma once

#include <memory>
#include <string>
#include <vector>

#include "lungsynth/nn/layers.hpp"

namespace lungsynth {

class Config;

// Predicts the noise in x_t given the timestep and a semantic condition.
// x_t is [N, 1, H, W], `timesteps` holds N 1-based steps, `condition` is a
// [N, 6, H, W] one-hot label map; an all-zero sample is the null condition.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual nn::Var predict(const nn::Var& x_t, const std::vector<int>& timesteps, const nn::Tensor& condition) = 0;
};

struct DenoiserConfig {
  int base_channels = 64;
  std::vector<int> channel_mult{1, 2, 2, 4};
  int spade_hidden = 64;
  int max_groups = 8;
  int num_classes = 6;

  void validate() const;
  // Reads `<section>.base_channels`, `channel_mult`, `spade_hidden`,
  // `max_groups`, falling back to the defaults above.
  static DenoiserConfig from_config(const Config& cfg, const std::string& section);
  // Spatial size must be divisible by this.
  int size_multiple() const { return 1 << (channel_mult.size() - 1); }
};

// Encoder-decoder denoiser. The encoder sees only the noisy image; every
// decoder normalisation is modulated per pixel by a scale and shift predicted
// from the label map, out = GN(h) * (1 + gamma(m)) + beta(m). Output
// projection is zero-initialised so an untrained model predicts zero noise.
class SemanticUNet : public NoisePredictor {
 public:
  SemanticUNet(const DenoiserConfig& config, std::uint64_t seed);
  ~SemanticUNet() override;

  nn::Var predict(const nn::Var& x_t, const std::vector<int>& timesteps, const nn::Tensor& condition) override;

  nn::ParameterStore& parameters() { return params_; }
  const nn::ParameterStore& parameters() const { return params_; }
  const DenoiserConfig& config() const { return config_; }

 private:
  struct Impl;
  DenoiserConfig config_;
  nn::ParameterStore params_;
  std::unique_ptr<Impl> impl_;
};

// Sinusoidal timestep features, [N, dim].
nn::Tensor timestep_embedding(const std::vector<int>& timesteps, int dim);

}  // namespace lungsynth
