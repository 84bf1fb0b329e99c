#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lungsynth/corpus.hpp"
#include "lungsynth/rng.hpp"

namespace lungsynth {

// ---- Task I: patch classification ----

enum class PatchLabel { kNonNodule = 0, kNodule = 1 };

struct Patch {
  Grid2D<float> pixels;  // size x size, zero-padded at image borders
  PatchLabel label = PatchLabel::kNonNodule;
  std::string patient_id;
  int slice_index = 0;
  OriginTag origin = OriginTag::kReal;
  int center_row = 0;
  int center_col = 0;
};

struct PatchOptions {
  int size = 32;
  int negatives_per_slice = 1;
  double negative_margin = 32.0;  // min Euclidean distance (px) to any nodule pixel
};

// Crop of `size` x `size` whose centre pixel (size/2, size/2) is (row, col).
Grid2D<float> crop_centered(const Grid2D<float>& image, int row, int col, int size);

// One positive per 8-connected nodule component (centred on its rounded
// centroid) and up to negatives_per_slice distinct negatives drawn uniformly
// from lung pixels at least negative_margin away from every nodule pixel.
// Throws ContractError if the slice has no lung pixels.
std::vector<Patch> extract_patches(const SlicePair& pair, const PatchOptions& options, Rng& rng);

struct ClassifierMetrics {
  long tp = 0, fp = 0, fn = 0, tn = 0;
  double accuracy = 0.0;
  std::optional<double> precision;
  std::optional<double> recall;  // sensitivity
  std::optional<double> specificity;
  std::optional<double> f1;
  std::vector<std::string> undefined;  // "<metric>: <reason>" for each absent value
};

ClassifierMetrics classifier_metrics(long tp, long fp, long fn, long tn);

// ---- Task II: localization ----

// Axis-aligned box in pixel coordinates; x is the column axis, the max edges
// are exclusive.
struct Box {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool valid() const { return x_min < x_max && y_min < y_max; }
  friend bool operator==(const Box&, const Box&) = default;
};

struct BoxDetection {
  Box box;
  double confidence = 0.0;
  std::string slice_id;
};

double iou(const Box& a, const Box& b);

// Tight half-open box of each 8-connected nodule component, in label order.
std::vector<Box> gt_boxes_from_mask(const SemanticLabelMap& mask);

struct SliceEval {
  std::string slice_id;
  std::vector<Box> ground_truth;
  std::vector<BoxDetection> detections;
};

struct ApAr {
  double ap = 0.0;
  double ar = 0.0;
};

// For every detection, in order of decreasing confidence (ties: slice order,
// then input order), the index of the matched ground truth or -1. Each
// detection takes the unmatched ground truth on its slice with the highest
// IoU >= threshold.
std::vector<std::vector<int>> greedy_match(std::span<const SliceEval> slices, double iou_threshold);

// AP: area under the 101-point interpolated precision-recall curve. AR:
// recall over all detections. Throws ContractError if there is no ground
// truth at all.
ApAr ap_ar_at_iou(std::span<const SliceEval> slices, double iou_threshold);

std::string slice_id(const std::string& patient_id, int slice_index);

// CSV with columns slice_id, x_min, y_min, x_max, y_max, confidence.
void write_detections(const std::filesystem::path& path, std::span<const BoxDetection> detections);
std::vector<BoxDetection> read_detections(const std::filesystem::path& path);

}  // namespace lungsynth
