#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lungsynth/grid.hpp"
#include "lungsynth/ingest.hpp"

namespace lungsynth {

enum class Label : std::uint8_t {
  kBackground = 0,
  kLeftLung = 1,
  kRightLung = 2,
  kTrachea = 3,
  kBody = 4,
  kNodule = 5,
};

inline constexpr int kNumLabels = 6;

// Per-pixel semantic class map with fixed integer encoding 0..5.
class SemanticLabelMap {
 public:
  SemanticLabelMap() = default;
  SemanticLabelMap(int rows, int cols) : labels_(rows, cols, 0) {}
  // Throws ContractError if any value is outside 0..5.
  explicit SemanticLabelMap(Grid2D<std::uint8_t> raw);

  int rows() const { return labels_.rows(); }
  int cols() const { return labels_.cols(); }
  Label at(int r, int c) const { return static_cast<Label>(labels_(r, c)); }
  void set(int r, int c, Label l) { labels_(r, c) = static_cast<std::uint8_t>(l); }
  const Grid2D<std::uint8_t>& raw() const { return labels_; }

  std::size_t count(Label l) const;
  bool has_nodule() const { return count(Label::kNodule) > 0; }
  Mask mask_of(Label l) const;

  friend bool operator==(const SemanticLabelMap&, const SemanticLabelMap&) = default;

 private:
  Grid2D<std::uint8_t> labels_;
};

// Slice-local cross-section of a nodule sphere.
struct NoduleRoi {
  std::vector<Pixel> pixels;
  std::vector<float> intensities;  // same order as pixels
  int rows = 0;
  int cols = 0;
  NoduleAnnotation source;
};

// Pixels of slice `slice_index` whose world-space distance to the nodule
// centroid is <= diameter/2 (closed ball). Intensities are sampled from
// `image`, which must have the volume's in-plane shape. Throws EmptyRoiError
// when the slice misses the sphere or no pixel centre falls inside it.
NoduleRoi crop_spherical_roi(const CTVolume& volume, const Grid2D<float>& image, const NoduleAnnotation& ann,
                             int slice_index);

// Globally optimal 1-D two-means; returns the midpoint of the two centres.
// Throws DegenerateClusterError for fewer than two distinct values.
double cluster_threshold(std::span<const float> values);

struct TwoMeansResult {
  double low_center = 0.0;
  double high_center = 0.0;
  double threshold = 0.0;
  std::size_t low_count = 0;
};
TwoMeansResult two_means(std::span<const float> values);

// ROI pixels with intensity >= threshold.
Mask build_nodule_mask(const NoduleRoi& roi, double threshold);

// Threshold at >= 127, fill holes (background components not 4-connected to
// the border), keep the largest 8-connected foreground component. Throws
// EmptyBodyError when nothing survives the threshold.
Mask build_body_mask(const Grid2D<std::uint8_t>& slice8, std::uint8_t threshold = 127);

// Morphology building blocks, exposed for reuse and testing.
Mask fill_holes(const Mask& mask);
// Component id per pixel (0 = unset, 1..n); returns n.
int label_components(const Mask& mask, bool eight_connected, Grid2D<int>& labels);
Mask largest_component(const Mask& mask);

// Paints body, left lung, right lung, trachea, nodule in that order; later
// layers win. Empty (default-constructed) masks are treated as all-zero.
SemanticLabelMap compose_semantic_mask(const Mask& body, const Mask& left_lung, const Mask& right_lung,
                                       const Mask& trachea, const Mask& nodule);

bool slice_contains_lung(const SemanticLabelMap& map);

// Options and result of building one slice's label map from raw inputs.
struct SliceMaskOptions {
  HuWindow window;
  RegionLabels region_labels;
  std::uint8_t body_threshold = 127;
};

struct SliceMaskResult {
  SemanticLabelMap labels;
  std::vector<std::string> warnings;
  std::size_t nodule_pixels = 0;
  bool body_empty = false;
};

// Full per-slice recipe: window, body mask, lung/trachea masks from the
// segmentation volume, nodule masks from every annotation whose sphere meets
// the slice, then composition.
SliceMaskResult build_slice_labels(const CTVolume& volume, const CTVolume& segmentation,
                                   std::span<const NoduleAnnotation> annotations, int slice_index,
                                   const SliceMaskOptions& options = {});

}  // namespace lungsynth
