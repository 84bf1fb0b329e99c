#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "lungsynth/grid.hpp"

namespace lungsynth {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

// 3D CT grid in Hounsfield units. Voxel (x, y, z) is stored at
// x + nx * (y + ny * z); a slice at fixed z is a (ny rows, nx cols) image.
class CTVolume {
 public:
  CTVolume() = default;
  CTVolume(std::array<int, 3> dims, Vec3 spacing, Vec3 origin, std::string series_id,
           std::vector<float> voxels);

  int nx() const { return dims_[0]; }
  int ny() const { return dims_[1]; }
  int nz() const { return dims_[2]; }
  const std::array<int, 3>& dims() const { return dims_; }
  const Vec3& spacing() const { return spacing_; }
  const Vec3& origin() const { return origin_; }
  const std::string& series_id() const { return series_id_; }
  const std::vector<float>& voxels() const { return voxels_; }

  float at(int x, int y, int z) const {
    return voxels_[static_cast<std::size_t>(x) + static_cast<std::size_t>(nx()) * (y + static_cast<std::size_t>(ny()) * z)];
  }
  bool contains(int x, int y, int z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < nx() && y < ny() && z < nz();
  }

  Grid2D<float> slice(int z) const;

  friend bool operator==(const CTVolume&, const CTVolume&) = default;

 private:
  std::array<int, 3> dims_{0, 0, 0};
  Vec3 spacing_{1, 1, 1};
  Vec3 origin_{};
  std::string series_id_;
  std::vector<float> voxels_;
};

enum class ElementType { kUInt8, kInt8, kUInt16, kInt16, kUInt32, kInt32, kFloat32, kFloat64 };

// Reads a MetaImage header (.mhd) and its raw data file. The series id is the
// header file stem. Throws FormatError naming a missing/corrupt key and
// IntegrityError when the raw byte count disagrees with DimSize.
CTVolume load_volume(const std::filesystem::path& header_path);

// Writes `<stem>.mhd` + `<stem>.raw`, little-endian. Values are rounded and
// saturated for integer element types.
void write_volume(const std::filesystem::path& header_path, const CTVolume& volume,
                  ElementType type = ElementType::kInt16);

// Continuous voxel coordinates: (p - origin) / spacing, componentwise.
Vec3 world_to_voxel(const Vec3& p_world, const CTVolume& volume);
Vec3 voxel_to_world(const Vec3& voxel, const CTVolume& volume);

struct HuWindow {
  double lo = -1000.0;
  double hi = 400.0;
  // Throws ConfigError unless lo < hi.
  void validate() const;
};

// clamp((v - lo) / (hi - lo), 0, 1)
double window_hu(double hu, const HuWindow& window = {});
Grid2D<float> window_hu(const Grid2D<float>& hu, const HuWindow& window = {});

// round(v * 255) for v in [0, 1].
std::uint8_t to_u8(double unit);
Grid2D<std::uint8_t> to_u8(const Grid2D<float>& unit);
Grid2D<float> from_u8(const Grid2D<std::uint8_t>& image);

struct WindowedSlice {
  Grid2D<float> pixels;  // in [0, 1]
  std::string series_id;
  int slice_index = 0;
};

WindowedSlice windowed_slice(const CTVolume& volume, int z, const HuWindow& window = {});

struct NoduleAnnotation {
  std::string series_id;
  Vec3 center_world;
  double diameter_mm = 0.0;
};

// Annotation CSV with header seriesuid,coordX,coordY,coordZ,diameter_mm.
std::vector<NoduleAnnotation> read_annotations(const std::filesystem::path& csv_path);
void write_annotations(const std::filesystem::path& csv_path, const std::vector<NoduleAnnotation>& anns);

// Annotation centre mapped into a volume; `inside` is false when the rounded
// voxel falls outside the grid (recorded as a warning by callers).
struct AnnotationPlacement {
  NoduleAnnotation annotation;
  Vec3 voxel;
  bool inside = false;
};

AnnotationPlacement place_annotation(const NoduleAnnotation& ann, const CTVolume& volume);

// Label values of the companion lung segmentation volumes. The defaults are
// the commonly cited LUNA16 seg-lungs encoding; confirm against the data.
struct RegionLabels {
  int left_lung = 3;
  int right_lung = 4;
  int trachea = 5;
};

struct RegionMasks {
  Mask left_lung;
  Mask right_lung;
  Mask trachea;
};

RegionMasks region_masks(const CTVolume& segmentation, int z, const RegionLabels& labels = {});

}  // namespace lungsynth
