#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "lungsynth/error.hpp"
#include "lungsynth/ingest.hpp"
#include "lungsynth/rng.hpp"
#include "lungsynth/semantic_masks.hpp"

namespace lungsynth {

enum class OriginTag { kReal, kSyntheticSdm, kSyntheticExternal };

std::string to_string(OriginTag tag);
// Throws FormatError on an unknown tag.
OriginTag parse_origin_tag(const std::string& text);

struct SlicePair {
  Grid2D<float> image;  // windowed, [0, 1]
  SemanticLabelMap mask;
  std::string patient_id;
  int slice_index = 0;
  OriginTag origin = OriginTag::kReal;

  bool has_nodule() const { return mask.has_nodule(); }
};

// One corpus manifest line. Paths are relative to the manifest's directory.
struct ManifestRow {
  std::string patient_id;
  int slice_index = 0;
  std::string image_path;
  std::string mask_path;
  bool has_nodule = false;
  OriginTag origin = OriginTag::kReal;
};

struct CorpusSplit {
  std::set<std::string> train_patients;
  std::set<std::string> test_patients;
  std::uint64_t seed = 0;
};

// Seeded shuffle of the sorted patient list; first n_train go to train, the
// next n_test to test. Throws ConfigError if there are too few patients.
CorpusSplit split_by_patient(const std::set<std::string>& patients, std::size_t n_train, std::size_t n_test,
                             std::uint64_t seed);

enum class SubsampleStrategy { kRandom, kStrided };
SubsampleStrategy parse_subsample_strategy(const std::string& text);

// Indices (ascending) of floor(keep_ratio * n) items out of n.
std::vector<std::size_t> subsample_indices(std::size_t n, double keep_ratio, std::uint64_t seed,
                                           SubsampleStrategy strategy = SubsampleStrategy::kRandom);

// Keeps floor(keep_ratio * N) items, preserving input order.
template <typename T>
std::vector<T> subsample_negatives(const std::vector<T>& negatives, double keep_ratio, std::uint64_t seed,
                                   SubsampleStrategy strategy = SubsampleStrategy::kRandom) {
  std::vector<T> out;
  for (auto i : subsample_indices(negatives.size(), keep_ratio, seed, strategy)) out.push_back(negatives[i]);
  return out;
}

// Appends synthetic items to a training set. Any synthetic item tagged real
// is a ContractError.
template <typename T>
std::vector<T> mix_synthetic(std::vector<T> train, const std::vector<T>& synthetic) {
  for (const auto& s : synthetic) {
    if (s.origin == OriginTag::kReal) {
      throw ContractError("mix_synthetic: item for patient " + s.patient_id + " slice " +
                          std::to_string(s.slice_index) + " is tagged real");
    }
  }
  train.insert(train.end(), synthetic.begin(), synthetic.end());
  return train;
}

// Rejects any synthetic item in a test partition.
template <typename T>
void require_all_real(const std::vector<T>& test, const std::string& what) {
  for (const auto& t : test) {
    if (t.origin != OriginTag::kReal) {
      throw ContractError(what + ": synthetic item (patient " + t.patient_id + ") in a test partition");
    }
  }
}

struct VolumeInput {
  CTVolume volume;
  CTVolume segmentation;
};

struct CorpusSummary {
  std::vector<SlicePair> pairs;
  std::size_t nodule_slices = 0;
  std::size_t negative_slices = 0;
  std::vector<std::string> warnings;
};

// Lung-containing slices of one volume with their label maps.
std::vector<SlicePair> enumerate_volume(const CTVolume& volume, const CTVolume& segmentation,
                                        std::span<const NoduleAnnotation> annotations,
                                        const SliceMaskOptions& options, std::vector<std::string>& warnings);

CorpusSummary enumerate_corpus(std::span<const VolumeInput> volumes, std::span<const NoduleAnnotation> annotations,
                               const SliceMaskOptions& options = {});

struct CorpusOptions {
  double keep_ratio = 0.25;
  SubsampleStrategy strategy = SubsampleStrategy::kRandom;
  std::size_t n_train = 744;
  std::size_t n_test = 144;
  std::uint64_t split_seed = 0;
  std::uint64_t subsample_seed = 0;
};

struct AssembledCorpus {
  CorpusSplit split;
  std::vector<ManifestRow> train;
  std::vector<ManifestRow> test;
  std::size_t negatives_before = 0;
  std::size_t negatives_kept = 0;
};

// Corpus-global negative subsampling followed by the patient split. All
// nodule slices are kept. Rows are returned in manifest order.
AssembledCorpus assemble_corpus(std::vector<ManifestRow> rows, const CorpusOptions& options);

// Manifest order: (patient, slice, origin, image path).
void sort_manifest(std::vector<ManifestRow>& rows);

// Manifest CSV: patient_id,slice_index,image_path,mask_path,has_nodule,origin_tag
void write_manifest(const std::filesystem::path& path, std::vector<ManifestRow> rows);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

inline constexpr const char* kManifestName = "manifest.csv";

// Incremental form of write_split: images are written on add(), the
// manifest on finish().
class SplitWriter {
 public:
  explicit SplitWriter(std::filesystem::path dir);
  const ManifestRow& add(const SlicePair& pair);
  std::vector<ManifestRow> finish();

 private:
  std::filesystem::path dir_;
  std::vector<ManifestRow> rows_;
  std::map<std::string, int> used_;
};

// Writes images/, masks/ and manifest.csv under `dir`. Returns the rows.
std::vector<ManifestRow> write_split(const std::filesystem::path& dir, std::span<const SlicePair> pairs);
// Loads every pair listed in dir/manifest.csv. Throws IntegrityError when a
// row's has_nodule disagrees with its mask or shapes differ.
std::vector<SlicePair> read_split(const std::filesystem::path& dir);
SlicePair load_pair(const std::filesystem::path& dir, const ManifestRow& row);

}  // namespace lungsynth
