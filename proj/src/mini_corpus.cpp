#include "lungsynth/mini_corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "lungsynth/error.hpp"
#include "lungsynth/rng.hpp"

namespace lungsynth {

namespace {

constexpr float kAir = -1000.0f;
constexpr float kLung = -850.0f;
constexpr float kTissue = 40.0f;
constexpr float kNodule = 30.0f;

struct Ellipse {
  double cx, cy, rx, ry;
  bool contains(double x, double y, double scale = 1.0) const {
    if (scale <= 0.0) return false;
    const double dx = (x - cx) / (rx * scale), dy = (y - cy) / (ry * scale);
    return dx * dx + dy * dy <= 1.0;
  }
};

}  // namespace

Phantom make_phantom(const std::string& series_id, const PhantomOptions& o, std::uint64_t seed) {
  if (o.size < 32 || o.slices < 4) throw ConfigError("phantom: need size >= 32 and at least 4 slices");
  Rng rng(seed);
  const int n = o.size, nz = o.slices;
  const double s = n / 64.0;
  const Vec3 spacing{o.spacing_xy, o.spacing_xy, o.spacing_z};
  const Vec3 origin{-0.5 * n * o.spacing_xy, -0.5 * n * o.spacing_xy, -100.0 - rng.uniform(0.0, 20.0)};

  const Ellipse body{n / 2.0 + rng.uniform(-1, 1) * s, n / 2.0 + rng.uniform(-1, 1) * s, (27 + rng.uniform(0, 2)) * s,
                     (21 + rng.uniform(0, 2)) * s};
  // Image right (larger x) holds the patient's left lung.
  const Ellipse right{body.cx - (12 + rng.uniform(0, 1.5)) * s, body.cy + rng.uniform(-1, 1) * s,
                      (8 + rng.uniform(0, 2)) * s, (13 + rng.uniform(0, 2)) * s};
  const Ellipse left{body.cx + (12 + rng.uniform(0, 1.5)) * s, body.cy + rng.uniform(-1, 1) * s,
                     (8 + rng.uniform(0, 2)) * s, (13 + rng.uniform(0, 2)) * s};
  const Ellipse trachea{body.cx, body.cy - 9 * s, 2.5 * s, 2.5 * s};
  const double zc = (nz - 1) / 2.0, zr = nz / 2.0 - 0.5;
  auto lung_scale = [&](int z) {
    if (z == 0 || z == nz - 1) return 0.0;
    const double t = (z - zc) / zr;
    return std::sqrt(std::max(0.0, 1.0 - 0.6 * t * t));
  };

  struct Sphere {
    double x, y, z, r;  // voxel units in-plane; z in slices; r in mm
  };
  std::vector<Sphere> spheres;
  Phantom ph;
  const int count = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(std::max(1, o.max_nodules))));
  for (int k = 0; k < count; ++k) {
    const Ellipse& lung = rng.bernoulli(0.5) ? left : right;
    const double r_mm = rng.uniform(3.0, 5.0) * s;
    const double zi = rng.uniform(zc - zr / 2, zc + zr / 2);
    const double a = rng.uniform(0.0, 2.0 * 3.141592653589793), d = rng.uniform(0.0, 0.45);
    const double x = lung.cx + d * lung.rx * std::cos(a), y = lung.cy + d * lung.ry * std::sin(a);
    spheres.push_back({x, y, zi, r_mm});
    const Vec3 world{origin.x + x * spacing.x, origin.y + y * spacing.y, origin.z + zi * spacing.z};
    ph.nodules.push_back({series_id, world, 2.0 * r_mm * 1.15});
  }

  std::vector<float> hu(static_cast<std::size_t>(n) * n * nz), seg(hu.size(), 0.0f);
  for (int z = 0; z < nz; ++z) {
    const double ls = lung_scale(z);
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        const auto idx = static_cast<std::size_t>(x) + static_cast<std::size_t>(n) * (y + static_cast<std::size_t>(n) * z);
        float v = kAir;
        float lab = 0.0f;
        if (body.contains(x, y)) {
          v = kTissue;
          if (left.contains(x, y, ls)) {
            v = kLung;
            lab = 3.0f;
          } else if (right.contains(x, y, ls)) {
            v = kLung;
            lab = 4.0f;
          } else if (z >= nz - nz / 3 && trachea.contains(x, y)) {
            v = kAir;
            lab = 5.0f;
          }
        }
        for (const auto& sp : spheres) {
          const double dx = (x - sp.x) * spacing.x, dy = (y - sp.y) * spacing.y, dz = (z - sp.z) * spacing.z;
          if (lab >= 3.0f && lab <= 4.0f && dx * dx + dy * dy + dz * dz <= sp.r * sp.r) v = kNodule;
        }
        hu[idx] = v + static_cast<float>(o.noise_hu * rng.normal());
        seg[idx] = lab;
      }
    }
  }
  ph.volume = CTVolume({n, n, nz}, spacing, origin, series_id, std::move(hu));
  ph.segmentation = CTVolume({n, n, nz}, spacing, origin, series_id, std::move(seg));
  return ph;
}

void write_phantom_set(const std::filesystem::path& dir, int count, const PhantomOptions& options, std::uint64_t seed,
                       const std::string& prefix) {
  std::vector<NoduleAnnotation> all;
  for (int i = 0; i < count; ++i) {
    char id[64];
    std::snprintf(id, sizeof(id), "%s-%03d", prefix.c_str(), i);
    const auto ph = make_phantom(id, options, derive_seed(seed, static_cast<std::uint64_t>(i)));
    write_volume(dir / "raw" / (std::string(id) + ".mhd"), ph.volume);
    write_volume(dir / "seg" / (std::string(id) + ".mhd"), ph.segmentation, ElementType::kUInt8);
    all.insert(all.end(), ph.nodules.begin(), ph.nodules.end());
  }
  write_annotations(dir / "annotations.csv", all);
}

std::vector<SlicePair> make_external_baseline(std::span<const SlicePair> masks, std::span<const SlicePair> reference,
                                              std::uint64_t seed) {
  if (reference.empty()) throw ContractError("external baseline: empty reference set");
  std::array<double, kNumLabels> sum{}, sq{}, cnt{};
  for (const auto& p : reference) {
    for (int r = 0; r < p.image.rows(); ++r) {
      for (int c = 0; c < p.image.cols(); ++c) {
        const auto l = static_cast<std::size_t>(p.mask.at(r, c));
        sum[l] += p.image(r, c);
        sq[l] += p.image(r, c) * p.image(r, c);
        cnt[l] += 1;
      }
    }
  }
  std::array<double, kNumLabels> mean{}, sd{};
  for (std::size_t l = 0; l < mean.size(); ++l) {
    if (cnt[l] > 0) {
      mean[l] = sum[l] / cnt[l];
      sd[l] = std::sqrt(std::max(0.0, sq[l] / cnt[l] - mean[l] * mean[l]));
    }
  }
  Rng rng(seed);
  std::vector<SlicePair> out;
  for (const auto& m : masks) {
    const int h = m.mask.rows(), w = m.mask.cols();
    Grid2D<float> raw(h, w);
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const auto l = static_cast<std::size_t>(m.mask.at(r, c));
        raw(r, c) = static_cast<float>(mean[l] + sd[l] * rng.normal());
      }
    }
    Grid2D<float> img(h, w);
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        double s = 0.0;
        int k = 0;
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            if (raw.in_bounds(r + dr, c + dc)) {
              s += raw(r + dr, c + dc);
              ++k;
            }
          }
        }
        img(r, c) = static_cast<float>(std::clamp(s / k, 0.0, 1.0));
      }
    }
    out.push_back({std::move(img), m.mask, m.patient_id, m.slice_index, OriginTag::kSyntheticExternal});
  }
  return out;
}

}  // namespace lungsynth
