#include <gtest/gtest.h>

#include <unsupported/Eigen/MatrixFunctions>

#include "lungsynth/error.hpp"
#include "lungsynth/fid.hpp"
#include "lungsynth/io.hpp"
#include "test_support.hpp"

using namespace lungsynth;

namespace {

FeatureStats stats(Eigen::VectorXd mu, Eigen::MatrixXd sigma) { return {std::move(mu), std::move(sigma), 100}; }

Eigen::MatrixXd random_spd(int d, Rng& rng) {
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) a(i, j) = rng.normal();
  }
  return a * a.transpose() / d + 0.1 * Eigen::MatrixXd::Identity(d, d);
}

// Independent route: general (Schur based) matrix square root of Sa Sb.
double fid_oracle(const FeatureStats& a, const FeatureStats& b) {
  const Eigen::MatrixXd prod = a.sigma * b.sigma;
  const Eigen::MatrixXcd root = prod.cast<std::complex<double>>().sqrt();
  return (a.mu - b.mu).squaredNorm() + a.sigma.trace() + b.sigma.trace() - 2.0 * root.trace().real();
}

std::vector<Grid2D<float>> random_images(int n, int size, Rng& rng) {
  std::vector<Grid2D<float>> out;
  for (int i = 0; i < n; ++i) {
    Grid2D<float> g(size, size);
    for (auto& v : g.data()) v = static_cast<float>(rng.uniform());
    out.push_back(g);
  }
  return out;
}

}  // namespace

TEST(Fid, IdenticalStatsGiveZero) {
  Rng rng(1);
  Eigen::VectorXd mu(6);
  for (int i = 0; i < 6; ++i) mu(i) = rng.normal();
  const auto s = stats(mu, random_spd(6, rng));
  EXPECT_LE(std::abs(fid(s, s)), 1e-6);
}

TEST(Fid, ScalarClosedForm) {
  const auto a = stats(Eigen::VectorXd::Constant(1, 0.0), Eigen::MatrixXd::Constant(1, 1, 1.0));
  const auto b = stats(Eigen::VectorXd::Constant(1, 1.0), Eigen::MatrixXd::Constant(1, 1, 4.0));
  EXPECT_NEAR(fid(a, b), 2.0, 1e-6);
}

TEST(Fid, DiagonalClosedFormAndSymmetry) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd ma(8), mb(8), va(8), vb(8);
    double want = 0.0;
    for (int i = 0; i < 8; ++i) {
      ma(i) = rng.normal();
      mb(i) = rng.normal();
      va(i) = rng.uniform(0.1, 3.0);
      vb(i) = rng.uniform(0.1, 3.0);
      want += (ma(i) - mb(i)) * (ma(i) - mb(i)) + va(i) + vb(i) - 2 * std::sqrt(va(i) * vb(i));
    }
    const auto a = stats(ma, va.asDiagonal()), b = stats(mb, vb.asDiagonal());
    EXPECT_NEAR(fid(a, b), want, 1e-6);
    EXPECT_NEAR(fid(a, b), fid(b, a), 1e-6);
  }
}

TEST(Fid, FullCovarianceMatchesSchurOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const int d = 2 + static_cast<int>(rng.uniform_int(10));
    Eigen::VectorXd ma(d), mb(d);
    for (int i = 0; i < d; ++i) {
      ma(i) = rng.normal();
      mb(i) = rng.normal();
    }
    const auto a = stats(ma, random_spd(d, rng)), b = stats(mb, random_spd(d, rng));
    EXPECT_NEAR(fid(a, b), fid_oracle(a, b), 1e-7 * std::max(1.0, fid_oracle(a, b)));
    EXPECT_NEAR(fid(a, b), fid(b, a), 1e-6);
  }
}

TEST(Fid, SingularCovariancesStayFinite) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(4, 4);
  s(0, 0) = 1.0;
  const auto a = stats(Eigen::VectorXd::Zero(4), s), b = stats(Eigen::VectorXd::Ones(4), Eigen::MatrixXd::Zero(4, 4));
  const double f = fid(a, b);
  EXPECT_TRUE(std::isfinite(f));
  EXPECT_NEAR(f, 4.0 + 1.0, 1e-5);
}

TEST(GaussianStats, HandComputedAndErrors) {
  Eigen::MatrixXd f(2, 2);
  f << 0, 0, 2, 2;
  const auto s = gaussian_stats(f);
  EXPECT_DOUBLE_EQ(s.mu(0), 1.0);
  EXPECT_DOUBLE_EQ(s.mu(1), 1.0);
  EXPECT_DOUBLE_EQ(s.sigma(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(s.sigma(0, 1), 2.0);
  EXPECT_DOUBLE_EQ(s.sigma(1, 1), 2.0);
  Eigen::MatrixXd same(5, 3);
  same.rowwise() = Eigen::RowVector3d(1, 2, 3);
  EXPECT_EQ(gaussian_stats(same).sigma.norm(), 0.0);
  EXPECT_THROW(gaussian_stats(Eigen::MatrixXd::Zero(1, 3)), ContractError);
}

TEST(Embedders, IdentityRowsAreFlattenedPixels) {
  Grid2D<float> g(2, 2);
  g(0, 0) = 0.1f;
  g(0, 1) = 0.2f;
  g(1, 0) = 0.3f;
  g(1, 1) = 0.4f;
  const std::vector<Grid2D<float>> imgs{g, g};
  const auto f = extract_features(imgs, IdentityEmbedder(2, 2));
  ASSERT_EQ(f.rows(), 2);
  for (int j = 0; j < 4; ++j) {
    EXPECT_FLOAT_EQ(static_cast<float>(f(0, j)), g[static_cast<std::size_t>(j)]);
    EXPECT_EQ(f(0, j), f(1, j));
  }
  EXPECT_THROW(extract_features(std::span<const Grid2D<float>>(), IdentityEmbedder(2, 2)), ContractError);
}

TEST(Embedders, RandomConvIsDeterministicAndSeeded) {
  Rng rng(4);
  const auto imgs = random_images(5, 40, rng);
  const RandomConvEmbedder a(16, 32, 11), b(16, 32, 11), c(16, 32, 12);
  const auto fa = extract_features(imgs, a), fb = extract_features(imgs, b), fc = extract_features(imgs, c);
  EXPECT_EQ(fa.cols(), 16);
  EXPECT_TRUE(fa == fb);
  EXPECT_FALSE(fa == fc);
  EXPECT_LE(fid(gaussian_stats(fa), gaussian_stats(fb)), 1e-6);
}

TEST(Embedders, RandomConvSeparatesDistributions) {
  Rng rng(5);
  auto bright = random_images(30, 32, rng), dark = random_images(30, 32, rng), dark2 = random_images(30, 32, rng);
  for (auto& g : bright) {
    for (auto& v : g.data()) v = 0.5f + 0.5f * v;
  }
  for (auto* set : {&dark, &dark2}) {
    for (auto& g : *set) {
      for (auto& v : g.data()) v *= 0.5f;
    }
  }
  const RandomConvEmbedder e(16, 32);
  const auto s_b = gaussian_stats(extract_features(bright, e)), s_d = gaussian_stats(extract_features(dark, e)),
             s_d2 = gaussian_stats(extract_features(dark2, e));
  EXPECT_GT(fid(s_b, s_d), 5.0 * fid(s_d, s_d2));
}

TEST(FidReport, WritesBlocks) {
  fixtures::TempDir dir("fid");
  std::vector<FidReportRow> rows{{"nodule", 10, 12, 1.5}, {"all", 20, 24, std::nan("")}};
  write_fid_report(dir / "r.txt", rows, {{"embedder", "identity"}});
  const auto text = io::read_text(dir / "r.txt");
  EXPECT_NE(text.find("[nodule]"), std::string::npos);
  EXPECT_NE(text.find("embedder"), std::string::npos);
  EXPECT_NE(text.find("NA"), std::string::npos);
}
