#include <gtest/gtest.h>

#include <cmath>

#include "lungsynth/config.hpp"
#include "lungsynth/error.hpp"
#include "lungsynth/nn/ops.hpp"
#include "lungsynth/patch_classifier.hpp"
#include "test_support.hpp"

using namespace lungsynth;

namespace {

// Nodule patches carry a bright central blob, others do not; both have
// noisy backgrounds.
std::vector<Patch> separable_patches(int n, int size, Rng& rng) {
  std::vector<Patch> out;
  for (int i = 0; i < n; ++i) {
    Patch p;
    p.pixels = Grid2D<float>(size, size);
    p.label = i % 2 ? PatchLabel::kNodule : PatchLabel::kNonNodule;
    for (int r = 0; r < size; ++r) {
      for (int c = 0; c < size; ++c) {
        double v = 0.2 + 0.1 * rng.normal();
        const double d2 = (r - size / 2.0) * (r - size / 2.0) + (c - size / 2.0) * (c - size / 2.0);
        if (p.label == PatchLabel::kNodule && d2 < 9.0) v = 0.8 + 0.05 * rng.normal();
        p.pixels(r, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
    p.patient_id = "p" + std::to_string(i % 7);
    out.push_back(std::move(p));
  }
  return out;
}

PatchClassifierConfig small_config() {
  PatchClassifierConfig c;
  c.base_channels = 8;
  c.stages = 2;
  c.epochs = 20;
  c.batch_size = 20;
  c.lr = 2e-3;
  return c;
}

}  // namespace

TEST(SqueezeExcite, ZeroBottleneckGatesBySigmoidOfBias) {
  Rng rng(1);
  nn::ParameterStore store;
  SqueezeExcite se(store, "se", 4, 2, rng);
  for (auto* lin : {&se.fc1, &se.fc2}) {
    lin->weight->value.fill(0.0f);
    lin->bias->value.fill(0.0f);
  }
  const std::vector<float> b2{-2.0f, 0.0f, 0.5f, 3.0f};
  for (std::size_t i = 0; i < 4; ++i) se.fc2.bias->value[i] = b2[i];
  nn::Tensor x({2, 4, 3, 3});
  for (auto& v : x.values()) v = static_cast<float>(rng.normal());
  const auto y = se(nn::constant(x));
  for (int n = 0; n < 2; ++n) {
    for (int c = 0; c < 4; ++c) {
      for (int k = 0; k < 9; ++k) {
        const std::size_t i = static_cast<std::size_t>((n * 4 + c) * 9 + k);
        EXPECT_NEAR(y->value[i], x[i] / (1.0 + std::exp(-b2[static_cast<std::size_t>(c)])), 1e-6);
      }
    }
  }
}

TEST(SEResNet, ForwardShapeAndProbabilities) {
  SEResNet model(small_config(), 3);
  Rng rng(2);
  const auto patches = separable_patches(6, 16, rng);
  const auto logits = model.forward(nn::constant(patch_batch(patches)));
  EXPECT_EQ(logits->value.shape(), (std::vector<int>{6, 2}));
  const auto p = model.predict_proba(patches);
  ASSERT_EQ(p.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    const double want = 1.0 / (1.0 + std::exp(logits->value[2 * i] - logits->value[2 * i + 1]));
    EXPECT_NEAR(p[i], want, 1e-5);
  }
}

TEST(SEResNet, PatchBatchRange) {
  Patch p;
  p.pixels = Grid2D<float>(2, 2);
  p.pixels(0, 0) = 1.0f;
  const std::vector<Patch> v{p};
  const auto b = patch_batch(v);
  EXPECT_EQ(b[0], 1.0f);
  EXPECT_EQ(b[1], -1.0f);
}

TEST(TrainPatchClassifier, SeparableFixtureReachesNinetyFivePercent) {
  Rng rng(3);
  const auto train = separable_patches(200, 16, rng);
  SEResNet model(small_config(), 4);
  const auto trace = train_patch_classifier(model, train, 5);
  EXPECT_EQ(trace.epoch_losses.size(), 20u);
  EXPECT_LT(trace.epoch_losses.back(), trace.epoch_losses.front());
  const auto m = evaluate_patch_classifier(model, train, 0.5);
  EXPECT_GE(m.accuracy, 0.95);
}

TEST(TrainPatchClassifier, EmptySetIsConfigError) {
  SEResNet model(small_config(), 4);
  EXPECT_THROW(train_patch_classifier(model, std::span<const Patch>(), 1), ConfigError);
}

TEST(TrainPatchClassifier, SeedDeterminism) {
  Rng rng(6);
  const auto train = separable_patches(40, 16, rng);
  auto cfg = small_config();
  cfg.epochs = 2;
  SEResNet a(cfg, 7), b(cfg, 7);
  EXPECT_EQ(train_patch_classifier(a, train, 8).epoch_losses, train_patch_classifier(b, train, 8).epoch_losses);
}

TEST(PatchClassifierIo, SaveLoadRoundTrip) {
  fixtures::TempDir dir("cls");
  Rng rng(9);
  const auto patches = separable_patches(4, 16, rng);
  SEResNet model(small_config(), 10);
  save_patch_classifier(dir / "m.bin", model);
  const auto back = load_patch_classifier(dir / "m.bin");
  EXPECT_EQ(back->config().base_channels, 8);
  EXPECT_EQ(model.predict_proba(patches), back->predict_proba(patches));
}

TEST(PatchClassifierConfig, ParsesSectionAndValidates) {
  const auto cfg = Config::parse("[task_i.model]\nbase_channels = 4\nepochs = 3\naugment = false\n");
  const auto c = PatchClassifierConfig::from_config(cfg, "task_i.model");
  EXPECT_EQ(c.base_channels, 4);
  EXPECT_EQ(c.epochs, 3);
  EXPECT_FALSE(c.augment);
  auto bad = c;
  bad.threshold = 1.5;
  EXPECT_THROW(bad.validate(), ConfigError);
}
