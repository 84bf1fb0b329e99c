#include "lungsynth/ingest.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "lungsynth/error.hpp"
#include "lungsynth/io.hpp"

namespace lungsynth {

namespace {

struct ElementInfo {
  ElementType type;
  const char* name;
  std::size_t bytes;
};

constexpr ElementInfo kElementTypes[] = {
    {ElementType::kUInt8, "MET_UCHAR", 1},  {ElementType::kInt8, "MET_CHAR", 1},
    {ElementType::kUInt16, "MET_USHORT", 2}, {ElementType::kInt16, "MET_SHORT", 2},
    {ElementType::kUInt32, "MET_UINT", 4},  {ElementType::kInt32, "MET_INT", 4},
    {ElementType::kFloat32, "MET_FLOAT", 4}, {ElementType::kFloat64, "MET_DOUBLE", 8},
};

const ElementInfo& element_info(ElementType t) {
  for (const auto& e : kElementTypes) {
    if (e.type == t) return e;
  }
  throw ContractError("unknown element type");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& value, std::size_t expected) {
  std::istringstream ss(value);
  std::vector<T> out;
  T v;
  while (ss >> v) out.push_back(v);
  if (!ss.eof() || out.size() != expected) {
    throw FormatError("MetaImage key '" + key + "' is corrupt: expected " + std::to_string(expected) +
                      " values, got '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "True" || value == "true" || value == "1") return true;
  if (value == "False" || value == "false" || value == "0") return false;
  throw FormatError("MetaImage key '" + key + "' is corrupt: '" + value + "'");
}

template <typename T>
T load_scalar(const unsigned char* p, bool big_endian) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, p, sizeof(T));
  if (big_endian != (std::endian::native == std::endian::big)) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

float decode(const unsigned char* p, ElementType t, bool big_endian) {
  switch (t) {
    case ElementType::kUInt8: return static_cast<float>(*p);
    case ElementType::kInt8: return static_cast<float>(static_cast<std::int8_t>(*p));
    case ElementType::kUInt16: return static_cast<float>(load_scalar<std::uint16_t>(p, big_endian));
    case ElementType::kInt16: return static_cast<float>(load_scalar<std::int16_t>(p, big_endian));
    case ElementType::kUInt32: return static_cast<float>(load_scalar<std::uint32_t>(p, big_endian));
    case ElementType::kInt32: return static_cast<float>(load_scalar<std::int32_t>(p, big_endian));
    case ElementType::kFloat32: return load_scalar<float>(p, big_endian);
    case ElementType::kFloat64: return static_cast<float>(load_scalar<double>(p, big_endian));
  }
  return 0.0f;
}

template <typename T>
void store_saturated(std::vector<unsigned char>& out, double v) {
  T x;
  if constexpr (std::is_floating_point_v<T>) {
    x = static_cast<T>(v);
  } else {
    const double r = std::clamp(std::round(v), static_cast<double>(std::numeric_limits<T>::min()),
                                static_cast<double>(std::numeric_limits<T>::max()));
    x = static_cast<T>(r);
  }
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &x, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

}  // namespace

CTVolume::CTVolume(std::array<int, 3> dims, Vec3 spacing, Vec3 origin, std::string series_id,
                   std::vector<float> voxels)
    : dims_(dims), spacing_(spacing), origin_(origin), series_id_(std::move(series_id)), voxels_(std::move(voxels)) {
  for (int d : dims_) {
    if (d < 1) throw ContractError("CTVolume: every dimension must be >= 1");
  }
  if (!(spacing_.x > 0 && spacing_.y > 0 && spacing_.z > 0)) {
    throw ContractError("CTVolume: spacing must be positive");
  }
  if (series_id_.empty()) throw ContractError("CTVolume: empty series id");
  const auto n = static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
  if (voxels_.size() != n) throw ContractError("CTVolume: voxel count does not match dimensions");
}

Grid2D<float> CTVolume::slice(int z) const {
  if (z < 0 || z >= nz()) throw ContractError("slice index " + std::to_string(z) + " out of range");
  Grid2D<float> out(ny(), nx());
  const auto offset = static_cast<std::size_t>(z) * nx() * ny();
  std::copy_n(voxels_.begin() + static_cast<std::ptrdiff_t>(offset), out.size(), out.data().begin());
  return out;
}

CTVolume load_volume(const std::filesystem::path& header_path) {
  std::ifstream in(header_path);
  if (!in) throw FormatError("cannot open MetaImage header " + header_path.string());
  std::map<std::string, std::string> keys;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    keys[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto require = [&](const std::string& key) -> const std::string& {
    auto it = keys.find(key);
    if (it == keys.end() || it->second.empty()) {
      throw FormatError(header_path.string() + ": missing MetaImage key '" + key + "'");
    }
    return it->second;
  };

  if (auto it = keys.find("ObjectType"); it != keys.end() && it->second != "Image") {
    throw FormatError(header_path.string() + ": MetaImage key 'ObjectType' must be Image");
  }
  const auto ndims = parse_list<int>("NDims", require("NDims"), 1)[0];
  if (ndims != 3) throw FormatError(header_path.string() + ": MetaImage key 'NDims' must be 3");
  const auto dim = parse_list<int>("DimSize", require("DimSize"), 3);
  for (int d : dim) {
    if (d < 1) throw FormatError(header_path.string() + ": MetaImage key 'DimSize' is corrupt");
  }
  const auto sp = parse_list<double>("ElementSpacing", require("ElementSpacing"), 3);
  for (double s : sp) {
    if (!(s > 0)) throw FormatError(header_path.string() + ": MetaImage key 'ElementSpacing' must be positive");
  }
  std::string offset_key = "Offset";
  if (!keys.count("Offset")) {
    if (keys.count("Origin")) offset_key = "Origin";
    else if (keys.count("Position")) offset_key = "Position";
  }
  const auto off = parse_list<double>(offset_key, require(offset_key), 3);

  const auto& type_name = require("ElementType");
  const ElementInfo* info = nullptr;
  for (const auto& e : kElementTypes) {
    if (type_name == e.name) info = &e;
  }
  if (!info) throw FormatError(header_path.string() + ": MetaImage key 'ElementType' unsupported: " + type_name);

  bool big_endian = false;
  if (auto it = keys.find("BinaryDataByteOrderMSB"); it != keys.end()) {
    big_endian = parse_bool("BinaryDataByteOrderMSB", it->second);
  } else if (auto it2 = keys.find("ElementByteOrderMSB"); it2 != keys.end()) {
    big_endian = parse_bool("ElementByteOrderMSB", it2->second);
  }
  if (auto it = keys.find("CompressedData"); it != keys.end() && parse_bool("CompressedData", it->second)) {
    throw FormatError(header_path.string() + ": compressed MetaImage data is not supported");
  }

  const auto& data_file = require("ElementDataFile");
  if (data_file == "LOCAL" || data_file.starts_with("LIST")) {
    throw FormatError(header_path.string() + ": MetaImage key 'ElementDataFile' must name a separate raw file");
  }
  const auto raw_path = header_path.parent_path() / data_file;
  std::ifstream raw(raw_path, std::ios::binary);
  if (!raw) throw FormatError(header_path.string() + ": cannot open raw data file " + raw_path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(raw)), std::istreambuf_iterator<char>());

  const auto count = static_cast<std::size_t>(dim[0]) * dim[1] * dim[2];
  if (bytes.size() != count * info->bytes) {
    throw IntegrityError(raw_path.string() + ": raw size " + std::to_string(bytes.size()) + " bytes, DimSize implies " +
                         std::to_string(count * info->bytes));
  }
  std::vector<float> voxels(count);
  for (std::size_t i = 0; i < count; ++i) voxels[i] = decode(bytes.data() + i * info->bytes, info->type, big_endian);

  return CTVolume({dim[0], dim[1], dim[2]}, {sp[0], sp[1], sp[2]}, {off[0], off[1], off[2]},
                  header_path.stem().string(), std::move(voxels));
}

void write_volume(const std::filesystem::path& header_path, const CTVolume& volume, ElementType type) {
  const auto& info = element_info(type);
  auto raw_path = header_path;
  raw_path.replace_extension(".raw");
  std::ostringstream hdr;
  hdr.precision(17);
  hdr << "ObjectType = Image\n"
      << "NDims = 3\n"
      << "BinaryData = True\n"
      << "BinaryDataByteOrderMSB = False\n"
      << "CompressedData = False\n"
      << "Offset = " << volume.origin().x << ' ' << volume.origin().y << ' ' << volume.origin().z << '\n'
      << "ElementSpacing = " << volume.spacing().x << ' ' << volume.spacing().y << ' ' << volume.spacing().z << '\n'
      << "DimSize = " << volume.nx() << ' ' << volume.ny() << ' ' << volume.nz() << '\n'
      << "ElementType = " << info.name << '\n'
      << "ElementDataFile = " << raw_path.filename().string() << '\n';
  io::write_text(header_path, hdr.str());

  std::vector<unsigned char> bytes;
  bytes.reserve(volume.voxels().size() * info.bytes);
  for (float v : volume.voxels()) {
    switch (type) {
      case ElementType::kUInt8: store_saturated<std::uint8_t>(bytes, v); break;
      case ElementType::kInt8: store_saturated<std::int8_t>(bytes, v); break;
      case ElementType::kUInt16: store_saturated<std::uint16_t>(bytes, v); break;
      case ElementType::kInt16: store_saturated<std::int16_t>(bytes, v); break;
      case ElementType::kUInt32: store_saturated<std::uint32_t>(bytes, v); break;
      case ElementType::kInt32: store_saturated<std::int32_t>(bytes, v); break;
      case ElementType::kFloat32: store_saturated<float>(bytes, v); break;
      case ElementType::kFloat64: store_saturated<double>(bytes, v); break;
    }
  }
  io::write_text(raw_path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

Vec3 world_to_voxel(const Vec3& p, const CTVolume& v) {
  return {(p.x - v.origin().x) / v.spacing().x, (p.y - v.origin().y) / v.spacing().y,
          (p.z - v.origin().z) / v.spacing().z};
}

Vec3 voxel_to_world(const Vec3& q, const CTVolume& v) {
  return {v.origin().x + q.x * v.spacing().x, v.origin().y + q.y * v.spacing().y, v.origin().z + q.z * v.spacing().z};
}

void HuWindow::validate() const {
  if (!(lo < hi)) throw ConfigError("HU window requires lo < hi");
}

double window_hu(double hu, const HuWindow& w) {
  w.validate();
  return std::clamp((hu - w.lo) / (w.hi - w.lo), 0.0, 1.0);
}

Grid2D<float> window_hu(const Grid2D<float>& hu, const HuWindow& w) {
  w.validate();
  Grid2D<float> out(hu.rows(), hu.cols());
  const double scale = 1.0 / (w.hi - w.lo);
  for (std::size_t i = 0; i < hu.size(); ++i) {
    out[i] = static_cast<float>(std::clamp((hu[i] - w.lo) * scale, 0.0, 1.0));
  }
  return out;
}

std::uint8_t to_u8(double unit) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(unit, 0.0, 1.0) * 255.0));
}

Grid2D<std::uint8_t> to_u8(const Grid2D<float>& unit) {
  Grid2D<std::uint8_t> out(unit.rows(), unit.cols());
  for (std::size_t i = 0; i < unit.size(); ++i) out[i] = to_u8(unit[i]);
  return out;
}

Grid2D<float> from_u8(const Grid2D<std::uint8_t>& image) {
  Grid2D<float> out(image.rows(), image.cols());
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = static_cast<float>(image[i] / 255.0);
  return out;
}

WindowedSlice windowed_slice(const CTVolume& volume, int z, const HuWindow& window) {
  return {window_hu(volume.slice(z), window), volume.series_id(), z};
}

std::vector<NoduleAnnotation> read_annotations(const std::filesystem::path& csv_path) {
  const auto table = io::read_csv(csv_path);
  const auto c_id = table.column("seriesuid");
  const auto c_x = table.column("coordX");
  const auto c_y = table.column("coordY");
  const auto c_z = table.column("coordZ");
  const auto c_d = table.column("diameter_mm");
  std::vector<NoduleAnnotation> out;
  out.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto where = csv_path.string() + " row " + std::to_string(r + 2);
    NoduleAnnotation a;
    a.series_id = row[c_id];
    if (a.series_id.empty()) throw FormatError(where + ": empty seriesuid");
    try {
      a.center_world = {std::stod(row[c_x]), std::stod(row[c_y]), std::stod(row[c_z])};
      a.diameter_mm = std::stod(row[c_d]);
    } catch (const std::exception&) {
      throw FormatError(where + ": non-numeric coordinate or diameter");
    }
    if (!(a.diameter_mm > 0)) throw FormatError(where + ": diameter_mm must be positive");
    out.push_back(std::move(a));
  }
  return out;
}

void write_annotations(const std::filesystem::path& csv_path, const std::vector<NoduleAnnotation>& anns) {
  io::CsvTable t;
  t.header = {"seriesuid", "coordX", "coordY", "coordZ", "diameter_mm"};
  for (const auto& a : anns) {
    t.rows.push_back({a.series_id, io::format_double(a.center_world.x), io::format_double(a.center_world.y),
                      io::format_double(a.center_world.z), io::format_double(a.diameter_mm)});
  }
  io::write_csv(csv_path, t);
}

AnnotationPlacement place_annotation(const NoduleAnnotation& ann, const CTVolume& volume) {
  AnnotationPlacement p{ann, world_to_voxel(ann.center_world, volume), false};
  const auto x = static_cast<int>(std::lround(p.voxel.x));
  const auto y = static_cast<int>(std::lround(p.voxel.y));
  const auto z = static_cast<int>(std::lround(p.voxel.z));
  p.inside = volume.contains(x, y, z);
  return p;
}

RegionMasks region_masks(const CTVolume& seg, int z, const RegionLabels& labels) {
  const auto s = seg.slice(z);
  RegionMasks m{Mask(s.rows(), s.cols()), Mask(s.rows(), s.cols()), Mask(s.rows(), s.cols())};
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto v = static_cast<int>(std::lround(s[i]));
    m.left_lung[i] = v == labels.left_lung;
    m.right_lung[i] = v == labels.right_lung;
    m.trachea[i] = v == labels.trachea;
  }
  return m;
}

}  // namespace lungsynth
