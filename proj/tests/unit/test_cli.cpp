#include <gtest/gtest.h>

#include <sstream>

#include "lungsynth/cli.hpp"
#include "lungsynth/corpus.hpp"
#include "lungsynth/io.hpp"
#include "lungsynth/mini_corpus.hpp"
#include "test_support.hpp"

using namespace lungsynth;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "lungsynth");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

constexpr const char* kTinyConfig = R"(seed = 7
[corpus]
n_train = 2
n_test = 1
[diffusion]
image_size = 32
batch_size = 2
total_steps = 4
timesteps = 6
log_every = 2
[diffusion.model]
base_channels = 4
channel_mult = [1, 2]
spade_hidden = 4
[fid]
embedder = "random_conv"
dim = 8
input_size = 32
)";

// Phantoms, masks and a trained checkpoint shared by the pipeline tests.
class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fixtures::TempDir("cli");
    PhantomOptions o;
    o.size = 32;
    o.slices = 6;
    write_phantom_set(dir() / "data", 3, o, 99);
    io::write_text(dir() / "tiny.toml", kTinyConfig);
    const auto cfg = (dir() / "tiny.toml").string();
    ASSERT_EQ(run({"--config", cfg, "build-masks", "--raw", (dir() / "data/raw").string(), "--seg",
                   (dir() / "data/seg").string(), "--annotations", (dir() / "data/annotations.csv").string(), "--out",
                   (dir() / "real").string()})
                  .code,
              0);
    ASSERT_EQ(run({"--config", cfg, "build-corpus", "--masks", (dir() / "real").string(), "--out",
                   (dir() / "corpus").string()})
                  .code,
              0);
    const auto r = run({"--config", cfg, "train-diffusion", "--train", (dir() / "corpus/train").string(), "--out",
                        (dir() / "ckpt.bin").string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static std::filesystem::path dir() { return dir_->path(); }
  static std::string cfg() { return (dir() / "tiny.toml").string(); }

  static fixtures::TempDir* dir_;
};
fixtures::TempDir* CliPipeline::dir_ = nullptr;

}  // namespace

TEST(Cli, UnknownSubcommandIsUsageError) {
  const auto r = run({"frobnicate"});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(run({}).code, 2);
}

TEST(Cli, HelpExitsZero) { EXPECT_EQ(run({"--help"}).code, 0); }

TEST(Cli, StochasticCommandWithoutSeedIsConfigError) {
  fixtures::TempDir d("noseed");
  const auto r = run({"build-corpus", "--masks", (d / "m").string(), "--out", (d / "o").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("seed"), std::string::npos);
}

TEST(Cli, MissingConfigFileIsConfigError) {
  EXPECT_EQ(run({"--config", "/nonexistent/x.toml", "report", "--dir", "/tmp"}).code, 2);
}

TEST(Cli, RunMatrixWithMissingSyntheticNamesTheArtifact) {
  fixtures::TempDir d("rm");
  io::write_text(d / "m.toml", "seed = 1\n[matrix]\nreal = \"real\"\nexperiments = [\"A\", \"C\"]\n");
  const auto r = run({"--config", (d / "m.toml").string(), "run-matrix"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("experiment C"), std::string::npos);
  EXPECT_NE(r.err.find("matrix.synthetic_c"), std::string::npos);
}

TEST(Cli, IngestCorruptVolumeIsIntegrityError) {
  fixtures::TempDir d("ingest");
  io::write_text(d / "v.mhd",
                 "ObjectType = Image\nNDims = 3\nDimSize = 4 4 4\nElementSpacing = 1 1 1\nOffset = 0 0 0\n"
                 "ElementType = MET_SHORT\nElementDataFile = v.raw\n");
  io::write_text(d / "v.raw", std::string(10, '\0'));
  EXPECT_EQ(run({"ingest", "--volume", (d / "v.mhd").string()}).code, 3);
}

TEST_F(CliPipeline, ArtifactsExist) {
  EXPECT_TRUE(std::filesystem::exists(dir() / "real" / kManifestName));
  EXPECT_TRUE(std::filesystem::exists(dir() / "corpus/train" / kManifestName));
  EXPECT_TRUE(std::filesystem::exists(dir() / "corpus/test" / kManifestName));
  EXPECT_TRUE(std::filesystem::exists(dir() / "ckpt.bin"));
  EXPECT_FALSE(read_manifest(dir() / "real" / kManifestName).empty());
}

TEST_F(CliPipeline, SampleIsDeterministicForASeed) {
  const auto masks = (dir() / "real").string(), ck = (dir() / "ckpt.bin").string();
  for (const char* out : {"s1", "s2"}) {
    const auto r = run({"--config", cfg(), "--seed", "7", "sample", "--checkpoint", ck, "--masks", masks, "--out",
                        (dir() / out).string(), "--count", "3"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  const auto a = read_manifest(dir() / "s1" / kManifestName), b = read_manifest(dir() / "s2" / kManifestName);
  ASSERT_EQ(a.size(), 3u);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].origin, OriginTag::kSyntheticSdm);
    EXPECT_EQ(fixtures::slurp(dir() / "s1" / a[i].image_path), fixtures::slurp(dir() / "s2" / b[i].image_path));
  }
  const auto r = run({"--config", cfg(), "--seed", "8", "sample", "--checkpoint", ck, "--masks", masks, "--out",
                      (dir() / "s3").string(), "--count", "3"});
  ASSERT_EQ(r.code, 0);
  const auto c = read_manifest(dir() / "s3" / kManifestName);
  EXPECT_NE(fixtures::slurp(dir() / "s1" / a[0].image_path), fixtures::slurp(dir() / "s3" / c[0].image_path));
}

TEST_F(CliPipeline, FidOfASetWithItselfIsZero) {
  const auto real = (dir() / "real").string();
  const auto r = run({"--config", cfg(), "fid", "--real", real, "--synth", real, "--out", (dir() / "fid.txt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto text = fixtures::slurp(dir() / "fid.txt");
  std::istringstream in(text);
  std::string line;
  int seen = 0;
  while (std::getline(in, line)) {
    if (!line.starts_with("fid = ") || line == "fid = NA") continue;
    EXPECT_LE(std::abs(std::stod(line.substr(6))), 1e-6) << line;
    ++seen;
  }
  EXPECT_GE(seen, 1);
}

TEST_F(CliPipeline, TrainAndEvaluateDetection) {
  fixtures::TempDir d("tt");
  io::write_text(d / "t.toml",
                 std::string(kTinyConfig) +
                     "[task_i]\npatch_size = 16\n[task_i.model]\nbase_channels = 4\nstages = 2\nepochs = 1\n");
  const auto c = (d / "t.toml").string();
  auto r = run({"--config", c, "train-task", "--task", "detection", "--train", (dir() / "corpus/train").string(),
                "--out", (d / "m.bin").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  r = run({"--config", c, "evaluate", "--task", "detection", "--model", (d / "m.bin").string(), "--test",
           (dir() / "corpus/test").string(), "--out", (d / "ev").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto t = io::read_csv(d / "ev/metrics.csv");
  EXPECT_FALSE(t.rows.empty());
  EXPECT_EQ(run({"--config", c, "train-task", "--task", "segmentation", "--train", (dir() / "corpus/train").string(),
                 "--out", (d / "x.bin").string()})
                .code,
            2);
}
