#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lungsynth/grid.hpp"

namespace lungsynth {

struct FeatureStats {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
  std::size_t n = 0;
};

// Fixed image-to-vector map used for feature statistics.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  virtual Eigen::VectorXd embed(const Grid2D<float>& image) const = 0;
};

// Flattened pixels; every image must be rows x cols.
class IdentityEmbedder : public Embedder {
 public:
  IdentityEmbedder(int rows, int cols) : rows_(rows), cols_(cols) {}
  std::string name() const override { return "identity"; }
  int dim() const override { return rows_ * cols_; }
  Eigen::VectorXd embed(const Grid2D<float>& image) const override;

 private:
  int rows_, cols_;
};

// Frozen convolutional feature extractor with weights drawn from a fixed
// seed. Images are resized to input_size, replicated to three channels and
// passed through strided conv + ReLU stages; the output is the concatenated
// global mean and standard deviation of the last two stages, projected to
// `dim` features.
class RandomConvEmbedder : public Embedder {
 public:
  explicit RandomConvEmbedder(int dim = 64, int input_size = 64, std::uint64_t seed = 0x5eedf1du);
  ~RandomConvEmbedder() override;
  std::string name() const override;
  int dim() const override { return dim_; }
  Eigen::VectorXd embed(const Grid2D<float>& image) const override;

 private:
  struct Impl;
  int dim_;
  int input_size_;
  std::uint64_t seed_;
  std::unique_ptr<Impl> impl_;
};

// Row i is the embedding of image i.
Eigen::MatrixXd extract_features(std::span<const Grid2D<float>> images, const Embedder& embedder);

// Column mean and unbiased covariance. Needs at least two rows.
FeatureStats gaussian_stats(const Eigen::MatrixXd& features);

// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)). The trace of the
// square root is taken from the eigenvalues of S_a^(1/2) S_b S_a^(1/2), with
// small negative eigenvalues clipped to zero; on failure both covariances
// are regularised with eps * I and the computation is retried.
double fid(const FeatureStats& a, const FeatureStats& b, double eps = 1e-6);

struct FidReportRow {
  std::string subset;  // nodule, non_nodule, all
  std::size_t n_real = 0;
  std::size_t n_synth = 0;
  double fid = 0.0;  // NaN when a side has fewer than two images (written as NA)
};

// Key/value text report, one block per subset, plus the recorded parameters.
void write_fid_report(const std::filesystem::path& path, std::span<const FidReportRow> rows,
                      const std::vector<std::pair<std::string, std::string>>& parameters);

}  // namespace lungsynth
