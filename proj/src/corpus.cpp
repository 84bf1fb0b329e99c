#include "lungsynth/corpus.hpp"

#include <cstdio>
#include <map>
#include <numeric>
#include <tuple>

#include "lungsynth/io.hpp"

namespace lungsynth {

std::string to_string(OriginTag tag) {
  switch (tag) {
    case OriginTag::kReal: return "real";
    case OriginTag::kSyntheticSdm: return "synthetic_sdm";
    case OriginTag::kSyntheticExternal: return "synthetic_external";
  }
  return "real";
}

OriginTag parse_origin_tag(const std::string& text) {
  if (text == "real") return OriginTag::kReal;
  if (text == "synthetic_sdm") return OriginTag::kSyntheticSdm;
  if (text == "synthetic_external") return OriginTag::kSyntheticExternal;
  throw FormatError("unknown origin_tag '" + text + "'");
}

CorpusSplit split_by_patient(const std::set<std::string>& patients, std::size_t n_train, std::size_t n_test,
                             std::uint64_t seed) {
  if (n_train + n_test > patients.size()) {
    throw ConfigError("split_by_patient: requested " + std::to_string(n_train) + "+" + std::to_string(n_test) +
                      " patients but only " + std::to_string(patients.size()) + " available");
  }
  std::vector<std::string> order(patients.begin(), patients.end());
  Rng rng(seed);
  rng.shuffle(order);
  CorpusSplit split;
  split.seed = seed;
  split.train_patients.insert(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test_patients.insert(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                             order.begin() + static_cast<std::ptrdiff_t>(n_train + n_test));
  return split;
}

SubsampleStrategy parse_subsample_strategy(const std::string& text) {
  if (text == "random") return SubsampleStrategy::kRandom;
  if (text == "strided") return SubsampleStrategy::kStrided;
  throw ConfigError("unknown subsample strategy '" + text + "' (expected random or strided)");
}

std::vector<std::size_t> subsample_indices(std::size_t n, double keep_ratio, std::uint64_t seed,
                                           SubsampleStrategy strategy) {
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) throw ConfigError("keep_ratio must lie in (0, 1]");
  const auto k = static_cast<std::size_t>(std::floor(keep_ratio * static_cast<double>(n)));
  std::vector<std::size_t> out;
  out.reserve(k);
  if (strategy == SubsampleStrategy::kStrided) {
    for (std::size_t i = 0; i < k; ++i) out.push_back(i * n / k);
    return out;
  }
  // Partial Fisher-Yates: the first k slots become a uniform k-subset.
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + rng.uniform_int(n - i);
    std::swap(idx[i], idx[j]);
  }
  out.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<SlicePair> enumerate_volume(const CTVolume& volume, const CTVolume& segmentation,
                                        std::span<const NoduleAnnotation> annotations,
                                        const SliceMaskOptions& options, std::vector<std::string>& warnings) {
  for (const auto& ann : annotations) {
    if (ann.series_id != volume.series_id()) continue;
    const auto placed = place_annotation(ann, volume);
    if (!placed.inside) {
      warnings.push_back(volume.series_id() + ": annotation centre (" + io::format_double(placed.voxel.x) + ", " +
                         io::format_double(placed.voxel.y) + ", " + io::format_double(placed.voxel.z) +
                         ") lies outside the voxel grid");
    }
  }
  std::vector<SlicePair> out;
  for (int z = 0; z < volume.nz(); ++z) {
    auto res = build_slice_labels(volume, segmentation, annotations, z, options);
    if (!slice_contains_lung(res.labels)) continue;
    warnings.insert(warnings.end(), res.warnings.begin(), res.warnings.end());
    SlicePair p;
    p.image = window_hu(volume.slice(z), options.window);
    p.mask = std::move(res.labels);
    p.patient_id = volume.series_id();
    p.slice_index = z;
    p.origin = OriginTag::kReal;
    out.push_back(std::move(p));
  }
  return out;
}

CorpusSummary enumerate_corpus(std::span<const VolumeInput> volumes, std::span<const NoduleAnnotation> annotations,
                               const SliceMaskOptions& options) {
  CorpusSummary s;
  std::set<std::string> seen;
  for (const auto& v : volumes) {
    if (!seen.insert(v.volume.series_id()).second) {
      throw ContractError("duplicate series id " + v.volume.series_id());
    }
    auto pairs = enumerate_volume(v.volume, v.segmentation, annotations, options, s.warnings);
    for (auto& p : pairs) {
      (p.has_nodule() ? s.nodule_slices : s.negative_slices)++;
      s.pairs.push_back(std::move(p));
    }
  }
  return s;
}

void sort_manifest(std::vector<ManifestRow>& rows) {
  std::sort(rows.begin(), rows.end(), [](const ManifestRow& a, const ManifestRow& b) {
    return std::tie(a.patient_id, a.slice_index, a.origin, a.image_path) <
           std::tie(b.patient_id, b.slice_index, b.origin, b.image_path);
  });
}

AssembledCorpus assemble_corpus(std::vector<ManifestRow> rows, const CorpusOptions& options) {
  sort_manifest(rows);
  std::vector<ManifestRow> kept;
  std::vector<ManifestRow> negatives;
  std::set<std::string> patients;
  for (auto& r : rows) {
    if (r.origin != OriginTag::kReal) throw ContractError("assemble_corpus: synthetic row in the real corpus");
    patients.insert(r.patient_id);
    (r.has_nodule ? kept : negatives).push_back(std::move(r));
  }
  AssembledCorpus out;
  out.negatives_before = negatives.size();
  auto sampled = subsample_negatives(negatives, options.keep_ratio, options.subsample_seed, options.strategy);
  out.negatives_kept = sampled.size();
  kept.insert(kept.end(), sampled.begin(), sampled.end());

  out.split = split_by_patient(patients, options.n_train, options.n_test, options.split_seed);
  for (auto& r : kept) {
    if (out.split.train_patients.count(r.patient_id)) out.train.push_back(r);
    else if (out.split.test_patients.count(r.patient_id)) out.test.push_back(r);
  }
  sort_manifest(out.train);
  sort_manifest(out.test);
  return out;
}

void write_manifest(const std::filesystem::path& path, std::vector<ManifestRow> rows) {
  sort_manifest(rows);
  io::CsvTable t;
  t.header = {"patient_id", "slice_index", "image_path", "mask_path", "has_nodule", "origin_tag"};
  for (const auto& r : rows) {
    t.rows.push_back({r.patient_id, std::to_string(r.slice_index), r.image_path, r.mask_path,
                      r.has_nodule ? "1" : "0", to_string(r.origin)});
  }
  io::write_csv(path, t);
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  const auto t = io::read_csv(path);
  const auto c_p = t.column("patient_id"), c_s = t.column("slice_index"), c_i = t.column("image_path"),
             c_m = t.column("mask_path"), c_h = t.column("has_nodule"), c_o = t.column("origin_tag");
  std::vector<ManifestRow> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    ManifestRow r;
    r.patient_id = row[c_p];
    try {
      r.slice_index = std::stoi(row[c_s]);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": bad slice_index on row " + std::to_string(i + 2));
    }
    r.image_path = row[c_i];
    r.mask_path = row[c_m];
    if (row[c_h] != "0" && row[c_h] != "1") {
      throw FormatError(path.string() + ": has_nodule must be 0 or 1 on row " + std::to_string(i + 2));
    }
    r.has_nodule = row[c_h] == "1";
    r.origin = parse_origin_tag(row[c_o]);
    out.push_back(std::move(r));
  }
  return out;
}

SplitWriter::SplitWriter(std::filesystem::path dir) : dir_(std::move(dir)) {}

const ManifestRow& SplitWriter::add(const SlicePair& p) {
  if (!p.image.same_shape(p.mask.raw())) throw ContractError("write_split: image and mask shapes differ");
  char base[64];
  std::snprintf(base, sizeof(base), "_%04d_", p.slice_index);
  auto stem = p.patient_id + base + to_string(p.origin);
  const int k = used_[stem]++;
  if (k > 0) stem += "_" + std::to_string(k);
  ManifestRow r{p.patient_id, p.slice_index, "images/" + stem + ".pgm", "masks/" + stem + ".pgm", p.has_nodule(),
                p.origin};
  io::write_pgm(dir_ / r.image_path, to_u8(p.image));
  io::write_pgm(dir_ / r.mask_path, p.mask.raw());
  rows_.push_back(std::move(r));
  return rows_.back();
}

std::vector<ManifestRow> SplitWriter::finish() {
  write_manifest(dir_ / kManifestName, rows_);
  sort_manifest(rows_);
  return std::move(rows_);
}

std::vector<ManifestRow> write_split(const std::filesystem::path& dir, std::span<const SlicePair> pairs) {
  SplitWriter w(dir);
  for (const auto& p : pairs) w.add(p);
  return w.finish();
}

SlicePair load_pair(const std::filesystem::path& dir, const ManifestRow& row) {
  SlicePair p;
  p.image = from_u8(io::read_pgm(dir / row.image_path));
  try {
    p.mask = SemanticLabelMap(io::read_pgm(dir / row.mask_path));
  } catch (const ContractError& e) {
    throw IntegrityError(row.mask_path + ": " + e.what());
  }
  if (!p.image.same_shape(p.mask.raw())) throw IntegrityError(row.image_path + ": image and mask shapes differ");
  p.patient_id = row.patient_id;
  p.slice_index = row.slice_index;
  p.origin = row.origin;
  if (p.has_nodule() != row.has_nodule) {
    throw IntegrityError(row.mask_path + ": has_nodule flag disagrees with mask content");
  }
  return p;
}

std::vector<SlicePair> read_split(const std::filesystem::path& dir) {
  std::vector<SlicePair> out;
  for (const auto& row : read_manifest(dir / kManifestName)) out.push_back(load_pair(dir, row));
  return out;
}

}  // namespace lungsynth
