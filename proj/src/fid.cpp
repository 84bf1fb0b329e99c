#include "lungsynth/fid.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lungsynth/error.hpp"
#include "lungsynth/io.hpp"
#include "lungsynth/nn/ops.hpp"
#include "lungsynth/rng.hpp"

namespace lungsynth {

Eigen::VectorXd IdentityEmbedder::embed(const Grid2D<float>& image) const {
  if (image.rows() != rows_ || image.cols() != cols_) {
    throw ContractError("identity embedder expects " + std::to_string(rows_) + "x" + std::to_string(cols_) +
                        " images");
  }
  Eigen::VectorXd v(dim());
  for (std::size_t i = 0; i < image.size(); ++i) v[static_cast<Eigen::Index>(i)] = image[i];
  return v;
}

struct RandomConvEmbedder::Impl {
  std::vector<nn::Var> weights;
  std::vector<nn::Var> biases;
  Eigen::MatrixXd projection;
};

namespace {

constexpr int kStageChannels[] = {16, 32, 64};

nn::Tensor bilinear_resize(const Grid2D<float>& img, int size) {
  nn::Tensor out({1, 3, size, size});
  const double sr = static_cast<double>(img.rows()) / size, sc = static_cast<double>(img.cols()) / size;
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  for (int r = 0; r < size; ++r) {
    const double y = std::clamp((r + 0.5) * sr - 0.5, 0.0, img.rows() - 1.0);
    const int y0 = static_cast<int>(y), y1 = std::min(y0 + 1, img.rows() - 1);
    const double fy = y - y0;
    for (int c = 0; c < size; ++c) {
      const double x = std::clamp((c + 0.5) * sc - 0.5, 0.0, img.cols() - 1.0);
      const int x0 = static_cast<int>(x), x1 = std::min(x0 + 1, img.cols() - 1);
      const double fx = x - x0;
      const double v = (1 - fy) * ((1 - fx) * img(y0, x0) + fx * img(y0, x1)) +
                       fy * ((1 - fx) * img(y1, x0) + fx * img(y1, x1));
      for (int ch = 0; ch < 3; ++ch) out[ch * plane + static_cast<std::size_t>(r) * size + c] = static_cast<float>(v);
    }
  }
  return out;
}

// Per-channel mean and standard deviation of a [1, C, H, W] tensor.
void channel_moments(const nn::Tensor& t, std::vector<double>& out) {
  const int c = t.dim(1);
  const std::size_t plane = static_cast<std::size_t>(t.dim(2)) * t.dim(3);
  for (int k = 0; k < c; ++k) {
    double s = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      const double v = t[k * plane + i];
      s += v;
      ss += v * v;
    }
    const double m = s / plane;
    out.push_back(m);
    out.push_back(std::sqrt(std::max(0.0, ss / plane - m * m)));
  }
}

}  // namespace

RandomConvEmbedder::RandomConvEmbedder(int dim, int input_size, std::uint64_t seed)
    : dim_(dim), input_size_(input_size), seed_(seed), impl_(std::make_unique<Impl>()) {
  if (dim < 1) throw ConfigError("embedder dimension must be positive");
  if (input_size < 16) throw ConfigError("embedder input size must be at least 16");
  Rng rng(seed);
  int in = 3;
  for (int out : kStageChannels) {
    const int fan_in = in * 9;
    nn::Tensor w({out, in, 3, 3});
    const double sd = std::sqrt(2.0 / fan_in);
    for (auto& v : w.values()) v = static_cast<float>(sd * rng.normal());
    impl_->weights.push_back(nn::constant(std::move(w)));
    nn::Tensor b({out});
    for (auto& v : b.values()) v = static_cast<float>(0.1 * rng.normal());
    impl_->biases.push_back(nn::constant(std::move(b)));
    in = out;
  }
  const int raw = 2 * (kStageChannels[1] + kStageChannels[2]);
  impl_->projection.resize(dim, raw);
  for (int i = 0; i < dim; ++i) {
    for (int j = 0; j < raw; ++j) impl_->projection(i, j) = rng.normal() / std::sqrt(static_cast<double>(raw));
  }
}

RandomConvEmbedder::~RandomConvEmbedder() = default;

std::string RandomConvEmbedder::name() const {
  return "random_conv(dim=" + std::to_string(dim_) + ",input=" + std::to_string(input_size_) +
         ",seed=" + std::to_string(seed_) + ")";
}

Eigen::VectorXd RandomConvEmbedder::embed(const Grid2D<float>& image) const {
  if (image.rows() == 0 || image.cols() == 0) throw ContractError("cannot embed an empty image");
  nn::NoGradGuard ng;
  auto h = nn::constant(bilinear_resize(image, input_size_));
  std::vector<double> raw;
  for (std::size_t s = 0; s < impl_->weights.size(); ++s) {
    h = nn::relu(nn::conv2d(h, impl_->weights[s], impl_->biases[s], 2, 1));
    if (s >= 1) channel_moments(h->value, raw);
  }
  const Eigen::Map<const Eigen::VectorXd> r(raw.data(), static_cast<Eigen::Index>(raw.size()));
  return impl_->projection * r;
}

Eigen::MatrixXd extract_features(std::span<const Grid2D<float>> images, const Embedder& embedder) {
  if (images.empty()) throw ContractError("extract_features: empty image set");
  Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), embedder.dim());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto v = embedder.embed(images[i]);
    if (v.size() != embedder.dim()) throw ContractError("embedder returned the wrong dimension");
    out.row(static_cast<Eigen::Index>(i)) = v.transpose();
  }
  return out;
}

FeatureStats gaussian_stats(const Eigen::MatrixXd& features) {
  const auto n = features.rows();
  if (n < 2) throw ContractError("gaussian_stats needs at least two samples, got " + std::to_string(n));
  if (!features.allFinite()) throw NumericalError("gaussian_stats: non-finite features");
  FeatureStats s;
  s.n = static_cast<std::size_t>(n);
  s.mu = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - s.mu.transpose();
  s.sigma = (centered.transpose() * centered) / static_cast<double>(n - 1);
  s.sigma = 0.5 * (s.sigma + s.sigma.transpose());
  return s;
}

namespace {

struct SqrtTrace {
  double value = 0.0;
  double min_eig = 0.0;
  double max_eig = 0.0;
  bool ok = false;
};

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, double& min_eig) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
  min_eig = es.eigenvalues().minCoeff();
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

SqrtTrace trace_sqrt_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  SqrtTrace out;
  double min_a = 0.0;
  const Eigen::MatrixXd ra = psd_sqrt(a, min_a);
  Eigen::MatrixXd m = ra * b * ra;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) return out;
  const auto& ev = es.eigenvalues();
  out.min_eig = std::min(ev.minCoeff(), min_a);
  out.max_eig = ev.maxCoeff();
  const double scale = std::max(1.0, std::abs(out.max_eig));
  // Negative eigenvalues beyond rounding would give an imaginary root.
  if (!ev.allFinite() || out.min_eig < -1e-3 * scale) return out;
  out.value = ev.cwiseMax(0.0).cwiseSqrt().sum();
  out.ok = true;
  return out;
}

}  // namespace

double fid(const FeatureStats& a, const FeatureStats& b, double eps) {
  if (a.mu.size() != b.mu.size() || a.sigma.rows() != a.mu.size() || b.sigma.rows() != b.mu.size()) {
    throw ContractError("fid: feature dimensions differ (" + std::to_string(a.mu.size()) + " vs " +
                        std::to_string(b.mu.size()) + ")");
  }
  const double mean_term = (a.mu - b.mu).squaredNorm();
  auto st = trace_sqrt_product(a.sigma, b.sigma);
  double tr = a.sigma.trace() + b.sigma.trace();
  if (!st.ok) {
    const auto id = Eigen::MatrixXd::Identity(a.sigma.rows(), a.sigma.cols());
    const auto retry = trace_sqrt_product(a.sigma + eps * id, b.sigma + eps * id);
    if (!retry.ok) {
      std::ostringstream msg;
      msg << "fid: matrix square root failed (min eigenvalue " << st.min_eig << ", max " << st.max_eig
          << "; after eps=" << eps << " regularisation min " << retry.min_eig << ")";
      throw NumericalError(msg.str());
    }
    st = retry;
    tr += 2.0 * eps * static_cast<double>(a.sigma.rows());
  }
  const double d = mean_term + tr - 2.0 * st.value;
  if (!std::isfinite(d)) throw NumericalError("fid: non-finite result");
  return std::max(0.0, d);
}

void write_fid_report(const std::filesystem::path& path, std::span<const FidReportRow> rows,
                      const std::vector<std::pair<std::string, std::string>>& parameters) {
  std::ostringstream out;
  for (const auto& [k, v] : parameters) out << k << " = " << v << '\n';
  for (const auto& r : rows) {
    out << '\n'
        << "[" << r.subset << "]\n"
        << "subset = " << r.subset << '\n'
        << "n_real = " << r.n_real << '\n'
        << "n_synth = " << r.n_synth << '\n'
        << "fid = " << (std::isnan(r.fid) ? std::string("NA") : io::format_double(r.fid)) << '\n';
  }
  io::write_text(path, out.str());
}

}  // namespace lungsynth
