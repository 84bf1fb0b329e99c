#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lungsynth/downstream.hpp"
#include "lungsynth/nn/layers.hpp"

namespace lungsynth {

class Config;

// Task I model interface: probability that each patch shows a nodule.
class PatchClassifier {
 public:
  virtual ~PatchClassifier() = default;
  virtual std::vector<double> predict_proba(std::span<const Patch> patches) = 0;
};

struct PatchClassifierConfig {
  int base_channels = 16;
  int stages = 3;  // channels double and resolution halves after the first
  int blocks_per_stage = 1;
  int se_reduction = 4;
  int epochs = 20;
  int batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  bool augment = true;  // random flips
  double threshold = 0.5;

  void validate() const;
  static PatchClassifierConfig from_config(const Config& cfg, const std::string& section);
};

// Channel attention: x * sigmoid(fc2(relu(fc1(mean_hw(x))))) per channel.
struct SqueezeExcite {
  nn::Linear fc1, fc2;

  SqueezeExcite() = default;
  SqueezeExcite(nn::ParameterStore& store, const std::string& name, int channels, int reduction, Rng& rng);
  nn::Var operator()(const nn::Var& x) const;
};

// Residual network with squeeze-excitation blocks and GroupNorm, ending in
// global pooling and a two-way linear head.
class SEResNet : public PatchClassifier {
 public:
  SEResNet(const PatchClassifierConfig& config, std::uint64_t seed);
  ~SEResNet() override;

  // x [N, 1, S, S] in model range; returns logits [N, 2].
  nn::Var forward(const nn::Var& x) const;
  std::vector<double> predict_proba(std::span<const Patch> patches) override;

  nn::ParameterStore& parameters() { return params_; }
  const nn::ParameterStore& parameters() const { return params_; }
  const PatchClassifierConfig& config() const { return config_; }

 private:
  struct Impl;
  PatchClassifierConfig config_;
  nn::ParameterStore params_;
  std::unique_ptr<Impl> impl_;
};

// Patches as a [N, 1, S, S] batch in [-1, 1].
nn::Tensor patch_batch(std::span<const Patch> patches, std::span<const std::size_t> order = {});

struct TrainTrace {
  std::vector<double> epoch_losses;
};

// Mini-batch AdamW on cross-entropy. Throws ConfigError on an empty set and
// NumericalError (with the loss trace) on divergence.
TrainTrace train_patch_classifier(SEResNet& model, std::span<const Patch> train, std::uint64_t seed,
                                  const std::function<void(int, double)>& on_epoch = {});

ClassifierMetrics evaluate_patch_classifier(PatchClassifier& model, std::span<const Patch> test, double threshold);

void save_patch_classifier(const std::filesystem::path& path, const SEResNet& model);
std::unique_ptr<SEResNet> load_patch_classifier(const std::filesystem::path& path);

}  // namespace lungsynth
