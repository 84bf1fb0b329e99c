#include <gtest/gtest.h>

#include <cmath>

#include "lungsynth/config.hpp"
#include "lungsynth/error.hpp"
#include "lungsynth/localizer.hpp"
#include "test_support.hpp"

using namespace lungsynth;

namespace {

// Dark lung field with one bright square nodule at a random position.
SlicePair nodule_slice(Rng& rng, int n = 32, bool nodule = true) {
  SlicePair p;
  p.image = Grid2D<float>(n, n);
  p.mask = SemanticLabelMap(n, n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      p.image(r, c) = static_cast<float>(std::clamp(0.1 + 0.03 * rng.normal(), 0.0, 1.0));
      p.mask.set(r, c, Label::kLeftLung);
    }
  }
  if (nodule) {
    const int s = 6 + static_cast<int>(rng.uniform_int(4));
    const int r0 = 2 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n - s - 4)));
    const int c0 = 2 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n - s - 4)));
    for (int r = r0; r < r0 + s; ++r) {
      for (int c = c0; c < c0 + s; ++c) {
        p.image(r, c) = 0.9f;
        p.mask.set(r, c, Label::kNodule);
      }
    }
  }
  p.patient_id = "p";
  return p;
}

LocalizerConfig small_config() {
  LocalizerConfig c;
  c.channels = 8;
  c.anchor_sizes = {8.0, 16.0};
  c.proposals = 8;
  c.roi_size = 8;
  c.epochs = 6;
  c.lr = 3e-3;
  return c;
}

}  // namespace

TEST(Nms, SuppressesOverlapsInScoreOrder) {
  const std::vector<Box> boxes{{0, 0, 10, 10}, {1, 1, 11, 11}, {20, 20, 30, 30}, {0, 0, 10, 9}};
  const std::vector<double> scores{0.8, 0.9, 0.5, 0.7};
  EXPECT_EQ(nms(boxes, scores, 0.5, 10), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(nms(boxes, scores, 0.5, 1), (std::vector<std::size_t>{1}));
  EXPECT_EQ(nms(boxes, scores, 1.0, 10).size(), 4u);
}

TEST(BoxCoding, RoundTrip) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const Box ref{rng.uniform(0, 20), rng.uniform(0, 20), 0, 0};
    const Box r{ref.x_min, ref.y_min, ref.x_min + rng.uniform(2, 20), ref.y_min + rng.uniform(2, 20)};
    const Box t{rng.uniform(0, 20), rng.uniform(0, 20), 0, 0};
    const Box target{t.x_min, t.y_min, t.x_min + rng.uniform(2, 20), t.y_min + rng.uniform(2, 20)};
    const auto d = encode_box(r, target);
    const std::array<float, 4> df{static_cast<float>(d[0]), static_cast<float>(d[1]), static_cast<float>(d[2]),
                                  static_cast<float>(d[3])};
    const auto back = decode_box(r, df);
    EXPECT_NEAR(back.x_min, target.x_min, 1e-4);
    EXPECT_NEAR(back.y_max, target.y_max, 1e-4);
  }
  const Box r{0, 0, 10, 10};
  const std::array<float, 4> zero{0, 0, 0, 0};
  EXPECT_EQ(decode_box(r, zero), r);
}

TEST(TwoStageLocalizer, LossIsFiniteAndRejectsBadShapes) {
  Rng rng(2);
  TwoStageLocalizer model(small_config(), 3);
  const auto pair = nodule_slice(rng);
  const auto l = model.loss(pair, rng);
  EXPECT_TRUE(std::isfinite(l->value[0]));
  EXPECT_GT(l->value[0], 0.0f);
  auto odd = nodule_slice(rng, 30);
  EXPECT_THROW(model.loss(odd, rng), Error);
}

TEST(TwoStageLocalizer, DetectRespectsLimits) {
  Rng rng(3);
  auto cfg = small_config();
  cfg.max_detections = 2;
  cfg.score_threshold = 0.0;
  TwoStageLocalizer model(cfg, 4);
  const auto dets = model.detect(nodule_slice(rng));
  EXPECT_LE(dets.size(), 2u);
  for (std::size_t i = 1; i < dets.size(); ++i) EXPECT_GE(dets[i - 1].confidence, dets[i].confidence);
  for (const auto& d : dets) EXPECT_TRUE(d.box.valid());
}

TEST(TwoStageLocalizer, LearnsBrightSquares) {
  Rng rng(5);
  std::vector<SlicePair> train, test;
  for (int i = 0; i < 24; ++i) train.push_back(nodule_slice(rng, 32, i % 4 != 0));
  for (int i = 0; i < 8; ++i) {
    auto p = nodule_slice(rng);
    p.slice_index = i;
    test.push_back(p);
  }
  TwoStageLocalizer model(small_config(), 6);
  const std::vector<double> thr{0.5};
  const auto before = evaluate_localizer(model, test, thr);
  const auto losses = train_localizer(model, train, 7);
  EXPECT_EQ(losses.size(), 6u);
  EXPECT_LT(losses.back(), losses.front());
  const auto after = evaluate_localizer(model, test, thr);
  EXPECT_GT(after.values[0].ap, before.values[0].ap);
  EXPECT_GE(after.values[0].ap, 0.5);
}

TEST(TwoStageLocalizer, EmptyTrainingSetIsConfigError) {
  TwoStageLocalizer model(small_config(), 1);
  EXPECT_THROW(train_localizer(model, std::span<const SlicePair>(), 1), ConfigError);
}

TEST(LocalizerIo, SaveLoadRoundTrip) {
  fixtures::TempDir dir("loc");
  Rng rng(8);
  auto cfg = small_config();
  cfg.score_threshold = 0.0;
  TwoStageLocalizer model(cfg, 9);
  save_localizer(dir / "l.bin", model);
  const auto back = load_localizer(dir / "l.bin");
  const auto pair = nodule_slice(rng);
  const auto a = model.detect(pair), b = back->detect(pair);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].box, b[i].box);
    EXPECT_EQ(a[i].confidence, b[i].confidence);
  }
}

TEST(LocalizerConfig, ParsesAndValidates) {
  const auto cfg = Config::parse("[task_ii.model]\nchannels = 4\nanchor_sizes = [4, 12]\nroi_size = 8\n");
  const auto c = LocalizerConfig::from_config(cfg, "task_ii.model");
  EXPECT_EQ(c.channels, 4);
  EXPECT_EQ(c.anchor_sizes, (std::vector<double>{4, 12}));
  auto bad = c;
  bad.roi_size = 6;
  EXPECT_THROW(bad.validate(), ConfigError);
}
