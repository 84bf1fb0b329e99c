#include <gtest/gtest.h>

#include "lungsynth/config.hpp"
#include "lungsynth/error.hpp"
#include "test_support.hpp"

using namespace lungsynth;

TEST(Config, ParsesSectionsAndTypes) {
  const auto cfg = Config::parse(R"(
seed = 7   # trailing comment
[diffusion]
lr = 1e-4
steps = 100_000
name = "sdm # not a comment"
flag = true
[diffusion.model]
channel_mult = [1, 2, 2, 4]
[matrix]
experiments = ["A", "B", C]
)");
  EXPECT_EQ(cfg.get_int("seed"), 7);
  EXPECT_DOUBLE_EQ(cfg.get_double("diffusion.lr"), 1e-4);
  EXPECT_EQ(cfg.get_int("diffusion.steps"), 100000);
  EXPECT_EQ(cfg.get_string("diffusion.name"), "sdm # not a comment");
  EXPECT_TRUE(cfg.get_bool("diffusion.flag"));
  EXPECT_EQ(cfg.get_int_list("diffusion.model.channel_mult"), (std::vector<int>{1, 2, 2, 4}));
  EXPECT_EQ(cfg.get_string_list("matrix.experiments"), (std::vector<std::string>{"A", "B", "C"}));
}

TEST(Config, MissingKeyAndTypeMismatchAreConfigErrors) {
  const auto cfg = Config::parse("a = 1\nb = \"x\"\n");
  EXPECT_THROW(cfg.get_int("missing"), ConfigError);
  EXPECT_EQ(cfg.get_int("missing", 3), 3);
  EXPECT_THROW(cfg.get_string("a"), ConfigError);
  EXPECT_THROW(cfg.get_double("b"), ConfigError);
  EXPECT_THROW(cfg.get_int_list("a"), ConfigError);
  EXPECT_THROW(Config::parse("[unterminated\n"), ConfigError);
  EXPECT_THROW(Config::parse("novalue\n"), ConfigError);
}

TEST(Config, OverridesReplaceValues) {
  auto cfg = Config::parse("[corpus]\nkeep_ratio = 0.25\nsubsample = \"random\"\n");
  cfg.apply_override("corpus.keep_ratio=0.5");
  cfg.apply_override("corpus.subsample=strided");
  cfg.apply_override("matrix.folds=3");
  EXPECT_DOUBLE_EQ(cfg.get_double("corpus.keep_ratio"), 0.5);
  EXPECT_EQ(cfg.get_string("corpus.subsample"), "strided");
  EXPECT_EQ(cfg.get_int("matrix.folds"), 3);
  EXPECT_THROW(cfg.apply_override("no_equals_sign"), ConfigError);
}

TEST(Config, HashIsOrderIndependentAndValueSensitive) {
  const auto a = Config::parse("x = 1\ny = 2\n");
  const auto b = Config::parse("y = 2\nx = 1\n");
  const auto c = Config::parse("x = 1\ny = 3\n");
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), c.hash());
}

TEST(Config, Fnv1aKnownValues) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Config, LoadsFromFile) {
  fixtures::TempDir dir("cfg");
  {
    std::ofstream out(dir / "c.toml");
    out << "[fid]\ndim = 16\n";
  }
  EXPECT_EQ(Config::load(dir / "c.toml").get_int("fid.dim"), 16);
  EXPECT_THROW(Config::load(dir / "absent.toml"), ConfigError);
}
