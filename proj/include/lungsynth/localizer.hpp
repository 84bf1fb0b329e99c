#pragma once

#include <array>
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

// Task II model interface.
class Localizer {
 public:
  virtual ~Localizer() = default;
  virtual std::vector<BoxDetection> detect(const SlicePair& pair) = 0;
};

struct LocalizerConfig {
  int channels = 16;
  std::vector<double> anchor_sizes{8.0, 16.0, 32.0};
  // Region proposal stage.
  int rpn_batch = 64;
  double rpn_pos_iou = 0.5;
  double rpn_neg_iou = 0.3;
  double rpn_nms_iou = 0.7;
  int proposals = 16;
  // Second stage on image crops.
  int roi_size = 16;
  int roi_batch = 16;
  double roi_pos_fraction = 0.25;
  double roi_pos_iou = 0.5;
  // Output.
  double det_nms_iou = 0.3;
  double score_threshold = 0.05;
  int max_detections = 5;
  // Optimisation.
  int epochs = 10;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  bool include_negative_slices = true;

  void validate() const;
  static LocalizerConfig from_config(const Config& cfg, const std::string& section);
};

// Greedy non-maximum suppression; returns kept indices by decreasing score.
std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores, double iou_threshold,
                             std::size_t max_keep);

// Box deltas (dx, dy, log dw, log dh) of `target` relative to `reference`
// and the inverse transform.
std::array<double, 4> encode_box(const Box& reference, const Box& target);
Box decode_box(const Box& reference, std::span<const float> deltas);

// Two-stage detector: a stride-4 convolutional backbone feeds a region
// proposal head over square anchors; the top proposals are cropped from the
// image, resampled to roi_size and scored and refined by a small CNN.
class TwoStageLocalizer : public Localizer {
 public:
  TwoStageLocalizer(const LocalizerConfig& config, std::uint64_t seed);
  ~TwoStageLocalizer() override;

  std::vector<BoxDetection> detect(const SlicePair& pair) override;
  // Sum of proposal and second-stage losses on one slice. Image sides must
  // be multiples of 4.
  nn::Var loss(const SlicePair& pair, Rng& rng);

  nn::ParameterStore& parameters() { return params_; }
  const nn::ParameterStore& parameters() const { return params_; }
  const LocalizerConfig& config() const { return config_; }

 private:
  struct Impl;
  LocalizerConfig config_;
  nn::ParameterStore params_;
  std::unique_ptr<Impl> impl_;
};

// Throws ConfigError on an empty set and NumericalError with the recent loss
// trace on divergence.
std::vector<double> train_localizer(TwoStageLocalizer& model, std::span<const SlicePair> train, std::uint64_t seed,
                                    const std::function<void(int, double)>& on_epoch = {});

// AP/AR at each threshold over every slice of `test`.
struct LocalizationScores {
  std::vector<double> thresholds;
  std::vector<ApAr> values;
  std::vector<BoxDetection> detections;
};
LocalizationScores evaluate_localizer(Localizer& model, std::span<const SlicePair> test,
                                      std::span<const double> iou_thresholds);

void save_localizer(const std::filesystem::path& path, const TwoStageLocalizer& model);
std::unique_ptr<TwoStageLocalizer> load_localizer(const std::filesystem::path& path);

}  // namespace lungsynth
