#include "lungsynth/downstream.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "lungsynth/error.hpp"
#include "lungsynth/io.hpp"
#include "lungsynth/semantic_masks.hpp"

namespace lungsynth {

Grid2D<float> crop_centered(const Grid2D<float>& image, int row, int col, int size) {
  Grid2D<float> out(size, size, 0.0f);
  const int r0 = row - size / 2, c0 = col - size / 2;
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      if (image.in_bounds(r0 + r, c0 + c)) out(r, c) = image(r0 + r, c0 + c);
    }
  }
  return out;
}

std::vector<Patch> extract_patches(const SlicePair& pair, const PatchOptions& options, Rng& rng) {
  if (options.size < 1 || options.negatives_per_slice < 0) throw ConfigError("patch options out of range");
  const auto& mask = pair.mask;
  auto make = [&](PatchLabel label, int r, int c) {
    Patch p;
    p.pixels = crop_centered(pair.image, r, c, options.size);
    p.label = label;
    p.patient_id = pair.patient_id;
    p.slice_index = pair.slice_index;
    p.origin = pair.origin;
    p.center_row = r;
    p.center_col = c;
    return p;
  };

  std::vector<Pixel> lung, nodule;
  for (int r = 0; r < mask.rows(); ++r) {
    for (int c = 0; c < mask.cols(); ++c) {
      const auto l = mask.at(r, c);
      if (l == Label::kLeftLung || l == Label::kRightLung) lung.push_back({r, c});
      if (l == Label::kNodule) nodule.push_back({r, c});
    }
  }
  if (lung.empty()) {
    throw ContractError("extract_patches: slice " + std::to_string(pair.slice_index) + " of " + pair.patient_id +
                        " has no lung pixels");
  }

  std::vector<Patch> out;
  Grid2D<int> comp;
  const int n = label_components(mask.mask_of(Label::kNodule), true, comp);
  std::vector<double> sr(static_cast<std::size_t>(n) + 1, 0.0), sc(sr.size(), 0.0), cnt(sr.size(), 0.0);
  for (const auto& p : nodule) {
    const auto k = static_cast<std::size_t>(comp(p.row, p.col));
    sr[k] += p.row;
    sc[k] += p.col;
    cnt[k] += 1;
  }
  for (int k = 1; k <= n; ++k) {
    const auto i = static_cast<std::size_t>(k);
    out.push_back(make(PatchLabel::kNodule, static_cast<int>(std::lround(sr[i] / cnt[i])),
                       static_cast<int>(std::lround(sc[i] / cnt[i]))));
  }

  const double m2 = options.negative_margin * options.negative_margin;
  std::vector<Pixel> candidates;
  for (const auto& p : lung) {
    const bool far = std::all_of(nodule.begin(), nodule.end(), [&](const Pixel& q) {
      const double dr = p.row - q.row, dc = p.col - q.col;
      return dr * dr + dc * dc >= m2;
    });
    if (far) candidates.push_back(p);
  }
  const auto k = std::min<std::size_t>(static_cast<std::size_t>(options.negatives_per_slice), candidates.size());
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + rng.uniform_int(candidates.size() - i);
    std::swap(candidates[i], candidates[j]);
    out.push_back(make(PatchLabel::kNonNodule, candidates[i].row, candidates[i].col));
  }
  return out;
}

ClassifierMetrics classifier_metrics(long tp, long fp, long fn, long tn) {
  if (tp < 0 || fp < 0 || fn < 0 || tn < 0) throw ContractError("classifier_metrics: negative count");
  const long total = tp + fp + fn + tn;
  if (total == 0) throw ContractError("classifier_metrics: empty confusion matrix");
  ClassifierMetrics m{tp, fp, fn, tn};
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(total);
  auto ratio = [&m](const char* name, long num, long den, const char* reason) -> std::optional<double> {
    if (den == 0) {
      m.undefined.push_back(std::string(name) + ": " + reason);
      return std::nullopt;
    }
    return static_cast<double>(num) / static_cast<double>(den);
  };
  m.precision = ratio("precision", tp, tp + fp, "no positive predictions");
  m.recall = ratio("recall", tp, tp + fn, "no positive cases");
  m.specificity = ratio("specificity", tn, tn + fp, "no negative cases");
  if (m.precision && m.recall && *m.precision + *m.recall > 0.0) {
    m.f1 = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
  } else if (m.precision && m.recall) {
    m.f1 = 0.0;
  } else {
    m.undefined.push_back("f1: precision or recall undefined");
  }
  return m;
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<Box> gt_boxes_from_mask(const SemanticLabelMap& mask) {
  Grid2D<int> comp;
  const int n = label_components(mask.mask_of(Label::kNodule), true, comp);
  std::vector<Box> boxes(static_cast<std::size_t>(n),
                         Box{static_cast<double>(mask.cols()), static_cast<double>(mask.rows()), 0.0, 0.0});
  for (int r = 0; r < mask.rows(); ++r) {
    for (int c = 0; c < mask.cols(); ++c) {
      const int k = comp(r, c);
      if (k == 0) continue;
      auto& b = boxes[static_cast<std::size_t>(k - 1)];
      b.x_min = std::min<double>(b.x_min, c);
      b.y_min = std::min<double>(b.y_min, r);
      b.x_max = std::max<double>(b.x_max, c + 1);
      b.y_max = std::max<double>(b.y_max, r + 1);
    }
  }
  return boxes;
}

namespace {

struct RankedDetection {
  double confidence;
  std::size_t slice;
  std::size_t index;
};

std::vector<RankedDetection> rank_detections(std::span<const SliceEval> slices) {
  std::vector<RankedDetection> all;
  for (std::size_t s = 0; s < slices.size(); ++s) {
    for (std::size_t i = 0; i < slices[s].detections.size(); ++i) {
      const auto& d = slices[s].detections[i];
      if (!d.box.valid()) throw ContractError("detection with an empty box on slice " + slices[s].slice_id);
      all.push_back({d.confidence, s, i});
    }
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const RankedDetection& a, const RankedDetection& b) { return a.confidence > b.confidence; });
  return all;
}

}  // namespace

std::vector<std::vector<int>> greedy_match(std::span<const SliceEval> slices, double iou_threshold) {
  std::vector<std::vector<int>> match(slices.size());
  std::vector<std::vector<bool>> used(slices.size());
  for (std::size_t s = 0; s < slices.size(); ++s) {
    match[s].assign(slices[s].detections.size(), -1);
    used[s].assign(slices[s].ground_truth.size(), false);
  }
  for (const auto& d : rank_detections(slices)) {
    const auto& sl = slices[d.slice];
    double best = -1.0;
    int best_g = -1;
    for (std::size_t g = 0; g < sl.ground_truth.size(); ++g) {
      if (used[d.slice][g]) continue;
      const double v = iou(sl.detections[d.index].box, sl.ground_truth[g]);
      if (v >= iou_threshold && v > best) {
        best = v;
        best_g = static_cast<int>(g);
      }
    }
    if (best_g >= 0) {
      used[d.slice][static_cast<std::size_t>(best_g)] = true;
      match[d.slice][d.index] = best_g;
    }
  }
  return match;
}

ApAr ap_ar_at_iou(std::span<const SliceEval> slices, double iou_threshold) {
  std::size_t n_gt = 0;
  for (const auto& s : slices) n_gt += s.ground_truth.size();
  if (n_gt == 0) throw ContractError("ap_ar_at_iou: no ground-truth boxes");
  const auto match = greedy_match(slices, iou_threshold);
  const auto ranked = rank_detections(slices);
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    if (match[ranked[k].slice][ranked[k].index] >= 0) ++tp;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
  }
  for (std::size_t k = precision.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double sum = 0.0;
  std::size_t j = 0;
  for (int i = 0; i <= 100; ++i) {
    const double r = i / 100.0;
    while (j < recall.size() && recall[j] < r - 1e-12) ++j;
    if (j < recall.size()) sum += precision[j];
  }
  return {sum / 101.0, static_cast<double>(tp) / static_cast<double>(n_gt)};
}

std::string slice_id(const std::string& patient_id, int slice_index) {
  return patient_id + ":" + std::to_string(slice_index);
}

void write_detections(const std::filesystem::path& path, std::span<const BoxDetection> detections) {
  io::CsvTable t{{"slice_id", "x_min", "y_min", "x_max", "y_max", "confidence"}, {}};
  for (const auto& d : detections) {
    t.rows.push_back({d.slice_id, io::format_double(d.box.x_min), io::format_double(d.box.y_min),
                      io::format_double(d.box.x_max), io::format_double(d.box.y_max),
                      io::format_double(d.confidence)});
  }
  io::write_csv(path, t);
}

namespace {

double parse_field(const std::string& s, const std::filesystem::path& path) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw FormatError(path.string() + ": bad number '" + s + "'");
  }
  return v;
}

}  // namespace

std::vector<BoxDetection> read_detections(const std::filesystem::path& path) {
  const auto t = io::read_csv(path);
  const std::size_t cs = t.column("slice_id"), c0 = t.column("x_min"), c1 = t.column("y_min"),
                    c2 = t.column("x_max"), c3 = t.column("y_max"), cc = t.column("confidence");
  std::vector<BoxDetection> out;
  for (const auto& row : t.rows) {
    BoxDetection d;
    d.slice_id = row[cs];
    d.box = {parse_field(row[c0], path), parse_field(row[c1], path), parse_field(row[c2], path),
             parse_field(row[c3], path)};
    d.confidence = parse_field(row[cc], path);
    if (!d.box.valid()) throw FormatError(path.string() + ": empty box for " + d.slice_id);
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace lungsynth
