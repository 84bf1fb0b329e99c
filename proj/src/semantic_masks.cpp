#include "lungsynth/semantic_masks.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include "lungsynth/error.hpp"

namespace lungsynth {

SemanticLabelMap::SemanticLabelMap(Grid2D<std::uint8_t> raw) : labels_(std::move(raw)) {
  for (auto v : labels_.data()) {
    if (v >= kNumLabels) throw ContractError("label value " + std::to_string(v) + " outside 0..5");
  }
}

std::size_t SemanticLabelMap::count(Label l) const {
  const auto v = static_cast<std::uint8_t>(l);
  return static_cast<std::size_t>(std::count(labels_.data().begin(), labels_.data().end(), v));
}

Mask SemanticLabelMap::mask_of(Label l) const {
  Mask m(rows(), cols());
  const auto v = static_cast<std::uint8_t>(l);
  for (std::size_t i = 0; i < labels_.size(); ++i) m[i] = labels_[i] == v;
  return m;
}

NoduleRoi crop_spherical_roi(const CTVolume& volume, const Grid2D<float>& image, const NoduleAnnotation& ann,
                             int slice_index) {
  if (image.rows() != volume.ny() || image.cols() != volume.nx()) {
    throw ContractError("crop_spherical_roi: image shape does not match volume slice");
  }
  const Vec3 c = world_to_voxel(ann.center_world, volume);
  const Vec3& sp = volume.spacing();
  const double r = ann.diameter_mm / 2.0;
  const double dz = (slice_index - c.z) * sp.z;
  const double r2 = r * r - dz * dz;
  if (r2 < 0.0) {
    throw EmptyRoiError("slice " + std::to_string(slice_index) + " is outside the nodule extent");
  }
  const double disk = std::sqrt(r2);
  const int x0 = std::max(0, static_cast<int>(std::floor(c.x - disk / sp.x)));
  const int x1 = std::min(volume.nx() - 1, static_cast<int>(std::ceil(c.x + disk / sp.x)));
  const int y0 = std::max(0, static_cast<int>(std::floor(c.y - disk / sp.y)));
  const int y1 = std::min(volume.ny() - 1, static_cast<int>(std::ceil(c.y + disk / sp.y)));

  NoduleRoi roi;
  roi.rows = volume.ny();
  roi.cols = volume.nx();
  roi.source = ann;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = (x - c.x) * sp.x;
      const double dy = (y - c.y) * sp.y;
      if (dx * dx + dy * dy + dz * dz <= r * r) {
        roi.pixels.push_back({y, x});
        roi.intensities.push_back(image(y, x));
      }
    }
  }
  if (roi.pixels.empty()) {
    throw EmptyRoiError("no pixel centre of slice " + std::to_string(slice_index) + " lies inside the nodule sphere");
  }
  return roi;
}

TwoMeansResult two_means(std::span<const float> values) {
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  if (v.size() < 2 || v.front() == v.back()) {
    throw DegenerateClusterError("two-means needs at least two distinct values");
  }
  // Centre the data so the prefix-sum SSE stays accurate.
  const double shift = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  const std::size_t n = v.size();
  std::vector<double> s1(n + 1, 0.0), s2(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = v[i] - shift;
    s1[i + 1] = s1[i] + d;
    s2[i + 1] = s2[i] + d * d;
  }
  auto sse = [&](std::size_t k) {
    const double nl = static_cast<double>(k), nh = static_cast<double>(n - k);
    const double sl = s1[k], sh = s1[n] - s1[k];
    return (s2[k] - sl * sl / nl) + ((s2[n] - s2[k]) - sh * sh / nh);
  };
  std::vector<std::pair<std::size_t, double>> splits;
  double best = INFINITY;
  for (std::size_t k = 1; k < n; ++k) {
    if (v[k] == v[k - 1]) continue;
    const double e = sse(k);
    splits.emplace_back(k, e);
    best = std::min(best, e);
  }
  const double tol = 1e-12 * std::max(1.0, s2[n]);
  std::size_t k = 0;
  for (const auto& [split, e] : splits) {
    if (e <= best + tol) {
      k = split;
      break;
    }
  }
  TwoMeansResult out;
  out.low_count = k;
  out.low_center = shift + s1[k] / static_cast<double>(k);
  out.high_center = shift + (s1[n] - s1[k]) / static_cast<double>(n - k);
  out.threshold = 0.5 * (out.low_center + out.high_center);
  return out;
}

double cluster_threshold(std::span<const float> values) { return two_means(values).threshold; }

Mask build_nodule_mask(const NoduleRoi& roi, double threshold) {
  if (!std::isfinite(threshold)) throw ContractError("build_nodule_mask: threshold must be finite");
  Mask m(roi.rows, roi.cols);
  for (std::size_t i = 0; i < roi.pixels.size(); ++i) {
    if (roi.intensities[i] >= threshold) m(roi.pixels[i].row, roi.pixels[i].col) = 1;
  }
  return m;
}

int label_components(const Mask& mask, bool eight_connected, Grid2D<int>& labels) {
  labels = Grid2D<int>(mask.rows(), mask.cols(), 0);
  int next = 0;
  std::deque<Pixel> queue;
  for (int r = 0; r < mask.rows(); ++r) {
    for (int c = 0; c < mask.cols(); ++c) {
      if (!mask(r, c) || labels(r, c)) continue;
      labels(r, c) = ++next;
      queue.push_back({r, c});
      while (!queue.empty()) {
        const auto p = queue.front();
        queue.pop_front();
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            if (dr == 0 && dc == 0) continue;
            if (!eight_connected && dr != 0 && dc != 0) continue;
            const int rr = p.row + dr, cc = p.col + dc;
            if (!mask.in_bounds(rr, cc) || !mask(rr, cc) || labels(rr, cc)) continue;
            labels(rr, cc) = next;
            queue.push_back({rr, cc});
          }
        }
      }
    }
  }
  return next;
}

Mask fill_holes(const Mask& mask) {
  // Background reachable from the border (4-connected) stays background.
  Mask outside(mask.rows(), mask.cols());
  std::deque<Pixel> queue;
  auto seed = [&](int r, int c) {
    if (!mask(r, c) && !outside(r, c)) {
      outside(r, c) = 1;
      queue.push_back({r, c});
    }
  };
  for (int r = 0; r < mask.rows(); ++r) {
    seed(r, 0);
    seed(r, mask.cols() - 1);
  }
  for (int c = 0; c < mask.cols(); ++c) {
    seed(0, c);
    seed(mask.rows() - 1, c);
  }
  constexpr int kDr[] = {-1, 1, 0, 0};
  constexpr int kDc[] = {0, 0, -1, 1};
  while (!queue.empty()) {
    const auto p = queue.front();
    queue.pop_front();
    for (int k = 0; k < 4; ++k) {
      const int rr = p.row + kDr[k], cc = p.col + kDc[k];
      if (mask.in_bounds(rr, cc)) seed(rr, cc);
    }
  }
  Mask out(mask.rows(), mask.cols());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = !outside[i];
  return out;
}

Mask largest_component(const Mask& mask) {
  Grid2D<int> labels;
  const int n = label_components(mask, true, labels);
  Mask out(mask.rows(), mask.cols());
  if (n == 0) return out;
  std::vector<std::size_t> sizes(static_cast<std::size_t>(n) + 1, 0);
  for (auto l : labels.data()) ++sizes[static_cast<std::size_t>(l)];
  int best = 1;
  for (int l = 2; l <= n; ++l) {
    if (sizes[static_cast<std::size_t>(l)] > sizes[static_cast<std::size_t>(best)]) best = l;
  }
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[i] == best;
  return out;
}

Mask build_body_mask(const Grid2D<std::uint8_t>& slice8, std::uint8_t threshold) {
  Mask fg(slice8.rows(), slice8.cols());
  bool any = false;
  for (std::size_t i = 0; i < slice8.size(); ++i) {
    fg[i] = slice8[i] >= threshold;
    any = any || fg[i];
  }
  if (!any) throw EmptyBodyError("body mask: no pixel at or above threshold " + std::to_string(threshold));
  return largest_component(fill_holes(fg));
}

SemanticLabelMap compose_semantic_mask(const Mask& body, const Mask& left_lung, const Mask& right_lung,
                                       const Mask& trachea, const Mask& nodule) {
  const Mask* layers[] = {&body, &left_lung, &right_lung, &trachea, &nodule};
  constexpr Label kOrder[] = {Label::kBody, Label::kLeftLung, Label::kRightLung, Label::kTrachea, Label::kNodule};
  const Mask* shape = nullptr;
  for (const auto* m : layers) {
    if (m->empty()) continue;
    if (!shape) shape = m;
    else if (!m->same_shape(*shape)) throw ContractError("compose_semantic_mask: mask shapes differ");
  }
  if (!shape) throw ContractError("compose_semantic_mask: every mask is empty; shape unknown");
  SemanticLabelMap out(shape->rows(), shape->cols());
  for (int k = 0; k < 5; ++k) {
    const auto& m = *layers[k];
    if (m.empty()) continue;
    for (int r = 0; r < m.rows(); ++r) {
      for (int c = 0; c < m.cols(); ++c) {
        if (m(r, c)) out.set(r, c, kOrder[k]);
      }
    }
  }
  return out;
}

bool slice_contains_lung(const SemanticLabelMap& map) {
  for (auto v : map.raw().data()) {
    if (v == static_cast<std::uint8_t>(Label::kLeftLung) || v == static_cast<std::uint8_t>(Label::kRightLung)) {
      return true;
    }
  }
  return false;
}

SliceMaskResult build_slice_labels(const CTVolume& volume, const CTVolume& segmentation,
                                   std::span<const NoduleAnnotation> annotations, int slice_index,
                                   const SliceMaskOptions& options) {
  if (segmentation.dims() != volume.dims()) {
    throw ContractError("segmentation " + segmentation.series_id() + " does not match volume dimensions");
  }
  SliceMaskResult result;
  const auto tag = volume.series_id() + " slice " + std::to_string(slice_index);
  const auto image = window_hu(volume.slice(slice_index), options.window);

  Mask body;
  try {
    body = build_body_mask(to_u8(image), options.body_threshold);
  } catch (const EmptyBodyError&) {
    result.body_empty = true;
    result.warnings.push_back(tag + ": empty body mask");
    body = Mask(image.rows(), image.cols());
  }
  const auto regions = region_masks(segmentation, slice_index, options.region_labels);

  Mask nodule(image.rows(), image.cols());
  for (const auto& ann : annotations) {
    if (ann.series_id != volume.series_id()) continue;
    NoduleRoi roi;
    try {
      roi = crop_spherical_roi(volume, image, ann, slice_index);
    } catch (const EmptyRoiError&) {
      continue;
    }
    Mask m;
    try {
      m = build_nodule_mask(roi, cluster_threshold(roi.intensities));
    } catch (const DegenerateClusterError&) {
      result.warnings.push_back(tag + ": constant-intensity nodule ROI, using full disk");
      m = Mask(roi.rows, roi.cols);
      for (const auto& p : roi.pixels) m(p.row, p.col) = 1;
    }
    std::size_t set = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m[i]) {
        nodule[i] = 1;
        ++set;
      }
    }
    if (set == 0) result.warnings.push_back(tag + ": nodule mask empty after threshold");
  }

  result.labels = compose_semantic_mask(body, regions.left_lung, regions.right_lung, regions.trachea, nodule);
  result.nodule_pixels = result.labels.count(Label::kNodule);
  if (result.nodule_pixels > 0 && !slice_contains_lung(result.labels)) {
    result.warnings.push_back(tag + ": nodule pixels on a slice without lung");
  }
  return result;
}

}  // namespace lungsynth
