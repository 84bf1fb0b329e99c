#include <gtest/gtest.h>

#include <cmath>

#include "lungsynth/config.hpp"
#include "lungsynth/diffusion.hpp"
#include "lungsynth/error.hpp"
#include "lungsynth/io.hpp"
#include "lungsynth/nn/ops.hpp"
#include "test_support.hpp"

using namespace lungsynth;

namespace {

// Knows x0, so it can return the exact noise for any x_t. Records whether
// any condition it saw was non-null.
class OracleDenoiser : public NoisePredictor {
 public:
  OracleDenoiser(nn::Tensor x0, const NoiseSchedule& s) : x0_(std::move(x0)), s_(s) {}
  nn::Var predict(const nn::Var& x_t, const std::vector<int>& ts, const nn::Tensor& cond) override {
    for (float v : cond.values()) saw_condition |= v != 0.0f;
    nn::Tensor eps(x_t->value.shape());
    const std::size_t per = x0_.numel();
    for (std::size_t n = 0; n < ts.size(); ++n) {
      const double ab = s_.alpha_bar(ts[n]);
      for (std::size_t i = 0; i < per; ++i) {
        eps[n * per + i] = static_cast<float>((x_t->value[n * per + i] - std::sqrt(ab) * x0_[i]) / std::sqrt(1 - ab));
      }
    }
    return nn::constant(eps);
  }
  bool saw_condition = false;

 private:
  nn::Tensor x0_;
  NoiseSchedule s_;
};

class ZeroDenoiser : public NoisePredictor {
 public:
  nn::Var predict(const nn::Var& x_t, const std::vector<int>&, const nn::Tensor&) override {
    return nn::constant(nn::Tensor(x_t->value.shape(), 0.0f));
  }
};

SemanticLabelMap disk_mask(int n, int radius) {
  SemanticLabelMap m(n, n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const int d = (r - n / 2) * (r - n / 2) + (c - n / 2) * (c - n / 2);
      if (d <= radius * radius) m.set(r, c, d <= 4 ? Label::kNodule : Label::kLeftLung);
      else m.set(r, c, Label::kBody);
    }
  }
  return m;
}

DenoiserConfig tiny_model() {
  DenoiserConfig d;
  d.base_channels = 4;
  d.channel_mult = {1, 2};
  d.spade_hidden = 4;
  d.max_groups = 2;
  return d;
}

}  // namespace

TEST(Schedule, SingleStepAndLinearProduct) {
  const auto one = NoiseSchedule::from_betas({0.5});
  EXPECT_EQ(one.alpha_bars(), std::vector<double>{0.5});
  const auto lin = make_schedule(1000, 1e-4, 0.02, ScheduleShape::kLinear);
  double prod = 1.0;
  for (int t = 1; t <= 1000; ++t) prod *= 1.0 - (1e-4 + (t - 1) * (0.02 - 1e-4) / 999.0);
  EXPECT_NEAR(lin.alpha_bar(1000), prod, 1e-15);
  EXPECT_LT(lin.alpha_bar(1000), 5e-5);
  EXPECT_DOUBLE_EQ(lin.beta(1), 1e-4);
  EXPECT_DOUBLE_EQ(lin.beta(1000), 0.02);
  EXPECT_THROW(make_schedule(10, 1e-4, 1.0, ScheduleShape::kLinear), ConfigError);
  EXPECT_THROW(NoiseSchedule::from_betas({0.1, 1.0}), ConfigError);
  EXPECT_THROW(lin.alpha_bar(0), ContractError);
}

TEST(Schedule, CosineIsMonotoneAndClipped) {
  const auto s = make_schedule(100, 1e-4, 0.999 - 1e-9, ScheduleShape::kCosine);
  for (int t = 2; t <= 100; ++t) EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
  const auto clipped = make_schedule(100, 1e-3, 0.05, ScheduleShape::kCosine);
  for (double b : clipped.betas()) {
    EXPECT_GE(b, 1e-3);
    EXPECT_LE(b, 0.05);
  }
  EXPECT_EQ(parse_schedule_shape("cosine"), ScheduleShape::kCosine);
  EXPECT_THROW(parse_schedule_shape("quadratic"), ConfigError);
}

TEST(Schedule, PosteriorVarianceAtFirstStepIsZero) {
  const auto s = make_schedule(10, 1e-3, 0.2, ScheduleShape::kLinear);
  EXPECT_EQ(s.posterior_variance(1), 0.0);
  for (int t = 2; t <= 10; ++t) EXPECT_LT(s.posterior_variance(t), s.beta(t));
}

TEST(ForwardDiffuse, LimitCases) {
  Rng rng(1);
  nn::Tensor x0({1, 1, 2, 2}, {0.1f, -0.2f, 0.3f, 0.9f}), eps({1, 1, 2, 2});
  for (auto& v : eps.values()) v = static_cast<float>(rng.normal());
  const auto nearly_identity = NoiseSchedule::from_betas({1e-12});
  const auto a = forward_diffuse(x0, 1, eps, nearly_identity);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(a[i], x0[i], 1e-5);
  const auto nearly_noise = NoiseSchedule::from_betas({1.0 - 1e-12});
  const auto b = forward_diffuse(x0, 1, eps, nearly_noise);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(b[i], eps[i], 1e-5);
}

TEST(ForwardDiffuse, MonteCarloVariance) {
  const auto s = make_schedule(100, 1e-3, 0.2, ScheduleShape::kLinear);
  Rng rng(2);
  const int n = 100000;
  nn::Tensor x0({n}, 0.0f), eps({n});
  for (auto& v : eps.values()) v = static_cast<float>(rng.normal());
  for (int t : {1, 10, 50, 100}) {
    const auto xt = forward_diffuse(x0, t, eps, s);
    double sq = 0.0;
    for (float v : xt.values()) sq += static_cast<double>(v) * v;
    EXPECT_NEAR(sq / n, 1.0 - s.alpha_bar(t), 0.02 * (1.0 - s.alpha_bar(t)));
  }
}

TEST(ForwardStep, IteratedMatchesClosedFormMarginal) {
  const auto s = make_schedule(8, 0.05, 0.3, ScheduleShape::kLinear);
  Rng rng(3);
  const int n = 50000;
  nn::Tensor x({n}, 0.7f);
  for (int t = 1; t <= 8; ++t) {
    nn::Tensor eps({n});
    for (auto& v : eps.values()) v = static_cast<float>(rng.normal());
    x = forward_step(x, t, eps, s);
  }
  double m = 0.0, sq = 0.0;
  for (float v : x.values()) m += v;
  m /= n;
  for (float v : x.values()) sq += (v - m) * (v - m);
  const double var = sq / (n - 1);
  const double want_m = std::sqrt(s.alpha_bar(8)) * 0.7, want_v = 1 - s.alpha_bar(8);
  EXPECT_NEAR(m, want_m, 4 * std::sqrt(want_v / n));
  EXPECT_NEAR(var, want_v, 4 * want_v * std::sqrt(2.0 / (n - 1)));
}

TEST(OneHot, EncodesLabels) {
  const auto m = disk_mask(8, 3);
  const auto t = one_hot(m);
  ASSERT_EQ(t.shape(), (std::vector<int>{1, kNumLabels, 8, 8}));
  for (int r = 0; r < 8; ++r) {
    for (int c = 0; c < 8; ++c) {
      float total = 0;
      for (int k = 0; k < kNumLabels; ++k) total += t[static_cast<std::size_t>((k * 8 + r) * 8 + c)];
      EXPECT_EQ(total, 1.0f);
      EXPECT_EQ(t[static_cast<std::size_t>((static_cast<int>(m.at(r, c)) * 8 + r) * 8 + c)], 1.0f);
    }
  }
}

TEST(TrainingLoss, OracleGivesZeroAndZeroPredictorGivesOne) {
  const auto s = make_schedule(50, 1e-3, 0.2, ScheduleShape::kLinear);
  Rng rng(4);
  nn::Tensor x0({1, 1, 32, 32});
  for (auto& v : x0.values()) v = static_cast<float>(rng.uniform(-1, 1));
  const auto cond = one_hot(disk_mask(32, 10));
  OracleDenoiser oracle(x0, s);
  EXPECT_NEAR(training_loss(oracle, x0, cond, s, 0.0, rng).loss->value[0], 0.0, 1e-6);
  ZeroDenoiser zero;
  double total = 0.0;
  for (int i = 0; i < 50; ++i) total += training_loss(zero, x0, cond, s, 0.0, rng).loss->value[0];
  EXPECT_NEAR(total / 50, 1.0, 0.03);
}

TEST(TrainingLoss, DropProbabilityOneHidesCondition) {
  const auto s = make_schedule(10, 1e-3, 0.2, ScheduleShape::kLinear);
  Rng rng(5);
  nn::Tensor x0({1, 1, 32, 32}, 0.0f);
  const auto cond = one_hot(disk_mask(32, 10));
  OracleDenoiser never(x0, s);
  for (int i = 0; i < 20; ++i) {
    const auto ls = training_loss(never, x0, cond, s, 1.0, rng);
    EXPECT_TRUE(ls.dropped[0]);
  }
  EXPECT_FALSE(never.saw_condition);
  OracleDenoiser always(x0, s);
  training_loss(always, x0, cond, s, 0.0, rng);
  EXPECT_TRUE(always.saw_condition);
}

TEST(GuidedNoise, ScaleLimits) {
  const nn::Tensor c({3}, {1.0f, 2.0f, 3.0f}), u({3}, {-1.0f, 0.0f, 5.0f});
  EXPECT_EQ(guided_noise(c, u, 0.0).values(), u.values());
  EXPECT_EQ(guided_noise(c, u, 1.0).values(), c.values());
  const auto g = guided_noise(c, u, 1.5);
  EXPECT_FLOAT_EQ(g[0], 2.0f);
  for (double s : {-1.0, 0.3, 7.0}) EXPECT_EQ(guided_noise(c, c, s).values(), c.values());
}

TEST(Sample, SingleStepOracleRecoversX0) {
  const auto s = NoiseSchedule::from_betas({0.3});
  Rng rng(6);
  nn::Tensor x0({1, 1, 16, 16});
  for (auto& v : x0.values()) v = static_cast<float>(rng.uniform(-1, 1));
  OracleDenoiser oracle(x0, s);
  for (double g : {1.0, 1.5}) {
    const auto out = sample(oracle, disk_mask(16, 5), s, g, rng);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], (x0[i] + 1) / 2, 1e-5);
  }
}

TEST(Sample, DeterministicAndShapedLikeMask) {
  SemanticUNet model(tiny_model(), 7);
  const auto s = make_schedule(5, 1e-3, 0.2, ScheduleShape::kLinear);
  SemanticLabelMap m(32, 16);
  m.set(3, 3, Label::kLeftLung);
  Rng a(9), b(9);
  const auto x = sample(model, m, s, 1.5, a);
  const auto y = sample(model, m, s, 1.5, b);
  EXPECT_EQ(x, y);
  EXPECT_EQ(x.rows(), 32);
  EXPECT_EQ(x.cols(), 16);
  for (float v : x.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Denoiser, UntrainedPredictsZeroAndConditionReachesOutputAfterTraining) {
  SemanticUNet model(tiny_model(), 3);
  nn::Tensor x({1, 1, 32, 32}, 0.5f);
  const auto out = model.predict(nn::constant(x), {3}, one_hot(disk_mask(32, 8)));
  for (float v : out->value.values()) EXPECT_EQ(v, 0.0f);
  EXPECT_THROW(model.predict(nn::constant(nn::Tensor({1, 1, 31, 31})), {3}, one_hot(SemanticLabelMap(31, 31))),
               Error);
}

TEST(TrainDiffusion, ShortRunLogsAndRejectsEmptyCorpus) {
  DiffusionTrainConfig c;
  c.image_size = 32;
  c.batch_size = 2;
  c.total_steps = 6;
  c.lr = 1e-3;
  c.timesteps = 10;
  c.beta_start = 1e-3;
  c.beta_end = 0.2;
  c.sample_every = 3;
  c.model = tiny_model();
  std::vector<SlicePair> corpus;
  for (int i = 0; i < 3; ++i) {
    SlicePair p;
    p.mask = disk_mask(64, 20);
    p.image = Grid2D<float>(64, 64, 0.3f);
    p.patient_id = "p";
    p.slice_index = i;
    corpus.push_back(p);
  }
  SemanticUNet model(c.model, 1);
  long steps = 0, grids = 0;
  const auto r = train_diffusion(
      model, c, corpus, 2, [&](const TrainProgress&) { ++steps; }, [&](long, const Grid2D<float>&) { ++grids; });
  EXPECT_EQ(r.losses.size(), 6u);
  EXPECT_EQ(steps, 6);
  EXPECT_EQ(grids, 2);
  SemanticUNet other(c.model, 1);
  EXPECT_THROW(train_diffusion(other, c, std::span<const SlicePair>(), 2), ConfigError);
}

TEST(TrainDiffusion, EmaWeightsAreTheAverageOfTheIterates) {
  DiffusionTrainConfig c;
  c.image_size = 32;
  c.batch_size = 2;
  c.total_steps = 5;
  c.lr = 1e-2;
  c.timesteps = 10;
  c.beta_start = 1e-3;
  c.beta_end = 0.2;
  c.model = tiny_model();
  std::vector<SlicePair> corpus(2);
  for (auto& p : corpus) {
    p.mask = disk_mask(32, 8);
    p.image = Grid2D<float>(32, 32, 0.25f);
  }
  // Oracle: replay the same run without averaging and fold each iterate in.
  c.ema_decay = 0.0;
  SemanticUNet raw(c.model, 4);
  std::vector<nn::Tensor> avg;
  for (const auto& [name, v] : raw.parameters().items()) avg.push_back(v->value);
  const double decay = 0.5;
  train_diffusion(raw, c, corpus, 9, [&](const TrainProgress& p) {
    const double d = std::min(decay, (1.0 + p.step) / (10.0 + p.step));
    const auto& items = raw.parameters().items();
    for (std::size_t k = 0; k < items.size(); ++k) {
      for (std::size_t i = 0; i < avg[k].numel(); ++i) {
        avg[k][i] = static_cast<float>(d * avg[k][i] + (1.0 - d) * items[k].second->value[i]);
      }
    }
  });
  c.ema_decay = decay;
  SemanticUNet smoothed(c.model, 4);
  train_diffusion(smoothed, c, corpus, 9);
  const auto& items = smoothed.parameters().items();
  double max_err = 0.0, moved = 0.0;
  for (std::size_t k = 0; k < items.size(); ++k) {
    for (std::size_t i = 0; i < avg[k].numel(); ++i) {
      max_err = std::max(max_err, static_cast<double>(std::abs(items[k].second->value[i] - avg[k][i])));
      moved = std::max(moved, static_cast<double>(std::abs(items[k].second->value[i] -
                                                           raw.parameters().items()[k].second->value[i])));
    }
  }
  EXPECT_LT(max_err, 1e-6);
  EXPECT_GT(moved, 1e-4);
  c.ema_decay = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TrainDiffusion, ConfigValidationAndParsing) {
  auto cfg = Config::parse(
      "[diffusion]\nimage_size = 64\ntimesteps = 20\nschedule = \"cosine\"\n[diffusion.model]\nchannel_mult = [1, 2]\n");
  const auto c = DiffusionTrainConfig::from_config(cfg);
  EXPECT_EQ(c.image_size, 64);
  EXPECT_EQ(c.schedule_shape, ScheduleShape::kCosine);
  EXPECT_EQ(c.model.channel_mult, (std::vector<int>{1, 2}));
  EXPECT_EQ(c.schedule().steps(), 20);
  cfg.apply_override("diffusion.image_size=48");
  EXPECT_THROW(DiffusionTrainConfig::from_config(cfg).validate(), ConfigError);
}

TEST(Checkpoint, RoundTripPreservesPredictions) {
  fixtures::TempDir dir("sdm");
  DiffusionTrainConfig c;
  c.image_size = 32;
  c.timesteps = 12;
  c.beta_start = 1e-3;
  c.beta_end = 0.1;
  c.model = tiny_model();
  SemanticUNet model(c.model, 5);
  // Perturb the zero-initialised output layer so predictions are nonzero.
  for (auto& [name, p] : model.parameters().items()) {
    for (auto& v : p->value.values()) v += 0.01f;
  }
  save_checkpoint(dir / "m.ckpt", model, c);
  auto back = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(back.config.timesteps, 12);
  EXPECT_EQ(back.schedule.betas(), c.schedule().betas());
  nn::Tensor x({1, 1, 32, 32}, 0.1f);
  const auto cond = one_hot(disk_mask(32, 8));
  const auto a = model.predict(nn::constant(x), {4}, cond)->value.values();
  const auto b = back.model->predict(nn::constant(x), {4}, cond)->value.values();
  EXPECT_EQ(a, b);
  io::write_text(dir / "bad.ckpt", "NOT A CHECKPOINT\n");
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), FormatError);
}

TEST(ResizePair, BoxFilterAndNearestLabels) {
  SlicePair p;
  p.image = Grid2D<float>(4, 4);
  for (int i = 0; i < 16; ++i) p.image[static_cast<std::size_t>(i)] = static_cast<float>(i);
  p.mask = SemanticLabelMap(4, 4);
  p.mask.set(0, 0, Label::kNodule);
  const auto r = resize_pair(p, 2);
  EXPECT_FLOAT_EQ(r.image(0, 0), (0 + 1 + 4 + 5) / 4.0f);
  EXPECT_EQ(r.mask.rows(), 2);
  for (int v = 0; v < 4; ++v) EXPECT_LE(static_cast<int>(r.mask.raw()[static_cast<std::size_t>(v)]), 5);
}

TEST(TileImages, GridLayout) {
  std::vector<Grid2D<float>> imgs{Grid2D<float>(2, 2, 0.1f), Grid2D<float>(2, 2, 0.2f), Grid2D<float>(2, 2, 0.3f)};
  const auto t = tile_images(imgs, 2);
  EXPECT_EQ(t.rows(), 4);
  EXPECT_EQ(t.cols(), 4);
  EXPECT_FLOAT_EQ(t(0, 3), 0.2f);
  EXPECT_FLOAT_EQ(t(3, 0), 0.3f);
}
