#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lungsynth/downstream.hpp"
#include "lungsynth/error.hpp"
#include "test_support.hpp"

using namespace lungsynth;

namespace {

SlicePair lung_slice(int n = 64) {
  SlicePair p;
  p.image = Grid2D<float>(n, n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) p.image(r, c) = static_cast<float>(r * n + c) / (n * n);
  }
  p.mask = SemanticLabelMap(n, n);
  for (int r = 4; r < n - 4; ++r) {
    for (int c = 4; c < n - 4; ++c) p.mask.set(r, c, c < n / 2 ? Label::kRightLung : Label::kLeftLung);
  }
  p.patient_id = "p";
  p.slice_index = 3;
  return p;
}

void paint_nodule(SlicePair& p, int r0, int c0, int size) {
  for (int r = r0; r < r0 + size; ++r) {
    for (int c = c0; c < c0 + size; ++c) p.mask.set(r, c, Label::kNodule);
  }
}

// Independent AP/AR: same matching rule, precision envelope computed by a
// reverse scan, 101 recall points.
ApAr ap_oracle(const std::vector<SliceEval>& slices, double thr) {
  struct D {
    double conf;
    std::size_t slice, idx;
  };
  std::vector<D> all;
  std::size_t n_gt = 0;
  for (std::size_t s = 0; s < slices.size(); ++s) {
    n_gt += slices[s].ground_truth.size();
    for (std::size_t i = 0; i < slices[s].detections.size(); ++i) all.push_back({slices[s].detections[i].confidence, s, i});
  }
  std::stable_sort(all.begin(), all.end(), [](const D& a, const D& b) { return a.conf > b.conf; });
  std::vector<std::vector<bool>> used(slices.size());
  for (std::size_t s = 0; s < slices.size(); ++s) used[s].assign(slices[s].ground_truth.size(), false);
  std::vector<double> prec, rec;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < all.size(); ++k) {
    const auto& sl = slices[all[k].slice];
    int best = -1;
    double best_iou = thr;
    for (std::size_t g = 0; g < sl.ground_truth.size(); ++g) {
      const double v = iou(sl.detections[all[k].idx].box, sl.ground_truth[g]);
      if (!used[all[k].slice][g] && v >= best_iou && (best < 0 || v > best_iou)) {
        best = static_cast<int>(g);
        best_iou = v;
      }
    }
    if (best >= 0) {
      used[all[k].slice][static_cast<std::size_t>(best)] = true;
      ++tp;
    }
    prec.push_back(static_cast<double>(tp) / (k + 1));
    rec.push_back(static_cast<double>(tp) / n_gt);
  }
  for (std::size_t k = prec.size(); k-- > 1;) prec[k - 1] = std::max(prec[k - 1], prec[k]);
  double ap = 0.0;
  for (int i = 0; i <= 100; ++i) {
    const double r = i / 100.0;
    const auto it = std::lower_bound(rec.begin(), rec.end(), r - 1e-12);
    if (it != rec.end()) ap += prec[static_cast<std::size_t>(it - rec.begin())];
  }
  return {ap / 101.0, rec.empty() ? 0.0 : rec.back()};
}

std::vector<SliceEval> random_eval(Rng& rng) {
  std::vector<SliceEval> out;
  const int ns = 1 + static_cast<int>(rng.uniform_int(4));
  for (int s = 0; s < ns; ++s) {
    SliceEval e;
    e.slice_id = "s" + std::to_string(s);
    const int ng = static_cast<int>(rng.uniform_int(3)) + (s == 0);
    for (int g = 0; g < ng; ++g) {
      const double x = rng.uniform(0, 40), y = rng.uniform(0, 40), w = rng.uniform(3, 12), h = rng.uniform(3, 12);
      e.ground_truth.push_back({x, y, x + w, y + h});
    }
    const int nd = static_cast<int>(rng.uniform_int(6));
    for (int d = 0; d < nd; ++d) {
      Box b;
      if (!e.ground_truth.empty() && rng.bernoulli(0.7)) {
        const Box& g = e.ground_truth[rng.uniform_int(e.ground_truth.size())];
        const double j = rng.uniform(0, 4);
        b = {g.x_min + rng.uniform(-j, j), g.y_min + rng.uniform(-j, j), g.x_max + rng.uniform(-j, j),
             g.y_max + rng.uniform(-j, j)};
        if (!b.valid()) b = g;
      } else {
        const double x = rng.uniform(0, 40), y = rng.uniform(0, 40);
        b = {x, y, x + rng.uniform(3, 12), y + rng.uniform(3, 12)};
      }
      e.detections.push_back({b, std::round(rng.uniform() * 10) / 10, e.slice_id});
    }
    out.push_back(e);
  }
  return out;
}

}  // namespace

TEST(Patches, OnePositiveAndRequestedNegatives) {
  auto p = lung_slice();
  paint_nodule(p, 20, 10, 3);
  Rng rng(1);
  const auto patches = extract_patches(p, {32, 1, 8.0}, rng);
  ASSERT_EQ(patches.size(), 2u);
  EXPECT_EQ(patches[0].label, PatchLabel::kNodule);
  EXPECT_EQ(patches[0].center_row, 21);
  EXPECT_EQ(patches[0].center_col, 11);
  EXPECT_EQ(patches[1].label, PatchLabel::kNonNodule);
  EXPECT_EQ(patches[1].pixels.rows(), 32);
  for (int r = 20; r < 23; ++r) {
    for (int c = 10; c < 13; ++c) {
      const double d = std::hypot(patches[1].center_row - r, patches[1].center_col - c);
      EXPECT_GE(d, 8.0);
    }
  }
}

TEST(Patches, NoduleFreeSliceGivesNegativesOnly) {
  const auto p = lung_slice();
  Rng rng(2);
  const auto patches = extract_patches(p, {32, 3, 8.0}, rng);
  ASSERT_EQ(patches.size(), 3u);
  std::set<std::pair<int, int>> centres;
  for (const auto& q : patches) {
    EXPECT_EQ(q.label, PatchLabel::kNonNodule);
    const auto l = p.mask.at(q.center_row, q.center_col);
    EXPECT_TRUE(l == Label::kLeftLung || l == Label::kRightLung);
    centres.insert({q.center_row, q.center_col});
  }
  EXPECT_EQ(centres.size(), 3u);
}

TEST(Patches, CornerNoduleIsPaddedAndCentred) {
  auto p = lung_slice();
  paint_nodule(p, 0, 0, 2);
  Rng rng(3);
  const auto patches = extract_patches(p, {32, 0, 8.0}, rng);
  ASSERT_EQ(patches.size(), 1u);
  const auto& q = patches[0];
  EXPECT_EQ(q.pixels.rows(), 32);
  EXPECT_EQ(q.pixels.cols(), 32);
  EXPECT_LE(std::abs(q.center_row - 0.5), 1.0);
  EXPECT_LE(std::abs(q.center_col - 0.5), 1.0);
  EXPECT_EQ(q.pixels(16 - q.center_row - 1, 16 - q.center_col - 1), 0.0f);
  EXPECT_FLOAT_EQ(q.pixels(16, 16), p.image(q.center_row, q.center_col));
}

TEST(Patches, NoLungIsContractError) {
  SlicePair p;
  p.image = Grid2D<float>(8, 8);
  p.mask = SemanticLabelMap(8, 8);
  Rng rng(4);
  EXPECT_THROW(extract_patches(p, {}, rng), ContractError);
}

TEST(Patches, CropCentredGeometry) {
  Grid2D<float> img(5, 5);
  for (int i = 0; i < 25; ++i) img[static_cast<std::size_t>(i)] = static_cast<float>(i + 1);
  const auto c = crop_centered(img, 2, 2, 4);
  EXPECT_EQ(c(2, 2), img(2, 2));
  EXPECT_EQ(c(0, 0), img(0, 0));
  const auto edge = crop_centered(img, 0, 0, 4);
  EXPECT_EQ(edge(0, 0), 0.0f);
  EXPECT_EQ(edge(2, 2), img(0, 0));
}

TEST(ClassifierMetrics, BalancedExample) {
  const auto m = classifier_metrics(9, 1, 1, 9);
  EXPECT_EQ(m.accuracy, 0.9);
  EXPECT_EQ(*m.precision, 0.9);
  EXPECT_EQ(*m.recall, 0.9);
  EXPECT_EQ(*m.specificity, 0.9);
  EXPECT_EQ(*m.f1, 0.9);
}

TEST(ClassifierMetrics, PerfectAndUndefined) {
  const auto m = classifier_metrics(5, 0, 0, 7);
  for (double v : {m.accuracy, *m.precision, *m.recall, *m.specificity, *m.f1}) EXPECT_EQ(v, 1.0);
  const auto none = classifier_metrics(0, 0, 0, 4);
  EXPECT_FALSE(none.precision.has_value());
  EXPECT_FALSE(none.recall.has_value());
  EXPECT_FALSE(none.f1.has_value());
  EXPECT_EQ(*none.specificity, 1.0);
  EXPECT_FALSE(none.undefined.empty());
  EXPECT_THROW(classifier_metrics(0, 0, 0, 0), ContractError);
}

TEST(Iou, Examples) {
  const Box a{0, 0, 2, 2}, b{1, 0, 3, 2}, far{10, 10, 12, 12};
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, far), 0.0);
  EXPECT_EQ(iou(a, b), 1.0 / 3.0);
  EXPECT_EQ(iou(a, b), iou(b, a));
}

TEST(GtBoxes, HalfOpenComponents) {
  SemanticLabelMap m(32, 32);
  EXPECT_TRUE(gt_boxes_from_mask(m).empty());
  for (int r = 10; r < 13; ++r) {
    for (int c = 10; c < 13; ++c) m.set(r, c, Label::kNodule);
  }
  auto boxes = gt_boxes_from_mask(m);
  ASSERT_EQ(boxes.size(), 1u);
  EXPECT_EQ(boxes[0], (Box{10, 10, 13, 13}));
  m.set(25, 2, Label::kNodule);
  boxes = gt_boxes_from_mask(m);
  ASSERT_EQ(boxes.size(), 2u);
  EXPECT_TRUE(std::find(boxes.begin(), boxes.end(), Box{2, 25, 3, 26}) != boxes.end());
}

TEST(ApAr, SingleMatch) {
  std::vector<SliceEval> s{{"a", {{0, 0, 10, 10}}, {{{0, 0, 10, 6}, 0.9, "a"}}}};
  const auto r = ap_ar_at_iou(s, 0.5);
  EXPECT_EQ(r.ap, 1.0);
  EXPECT_EQ(r.ar, 1.0);
}

TEST(ApAr, HandComputedTwoDetectionCase) {
  // IoU 0.3 then IoU 0.7 against one ground truth.
  const Box gt{0, 0, 10, 10};
  const Box low{0, 0, 10, 3}, high{0, 0, 10, 7};
  ASSERT_NEAR(iou(low, gt), 0.3, 1e-12);
  ASSERT_NEAR(iou(high, gt), 0.7, 1e-12);
  std::vector<SliceEval> s{{"a", {gt}, {{low, 0.9, "a"}, {high, 0.8, "a"}}}};
  const auto r = ap_ar_at_iou(s, 0.5);
  EXPECT_EQ(r.ap, 0.5);
  EXPECT_EQ(r.ar, 1.0);
}

TEST(ApAr, NoGroundTruthIsContractError) {
  std::vector<SliceEval> s{{"a", {}, {{{0, 0, 1, 1}, 0.5, "a"}}}};
  EXPECT_THROW(ap_ar_at_iou(s, 0.5), ContractError);
}

TEST(ApAr, MatchesOracleAndIsMonotoneInThreshold) {
  Rng rng(7);
  for (int t = 0; t < 200; ++t) {
    const auto s = random_eval(rng);
    double prev_ap = 2.0, prev_ar = 2.0;
    for (double thr : {0.1, 0.3, 0.5, 0.6, 0.7, 0.9}) {
      const auto got = ap_ar_at_iou(s, thr);
      const auto want = ap_oracle(s, thr);
      EXPECT_NEAR(got.ap, want.ap, 1e-12);
      EXPECT_NEAR(got.ar, want.ar, 1e-12);
      EXPECT_LE(got.ap, prev_ap + 1e-12);
      EXPECT_LE(got.ar, prev_ar + 1e-12);
      prev_ap = got.ap;
      prev_ar = got.ar;
    }
  }
}

TEST(Detections, CsvRoundTrip) {
  fixtures::TempDir dir("det");
  std::vector<BoxDetection> d{{{1.5, 2, 3, 4.25}, 0.75, slice_id("p1", 3)}, {{0, 0, 1, 1}, 0.1, slice_id("p2", 0)}};
  write_detections(dir / "d.csv", d);
  const auto back = read_detections(dir / "d.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].box, d[0].box);
  EXPECT_EQ(back[0].confidence, 0.75);
  EXPECT_EQ(back[0].slice_id, "p1:3");
}
