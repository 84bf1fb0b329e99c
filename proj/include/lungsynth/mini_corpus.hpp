#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lungsynth/corpus.hpp"
#include "lungsynth/ingest.hpp"

namespace lungsynth {

// Procedural chest phantoms for fixtures and smoke runs: an elliptical body
// of soft tissue, two air-filled lungs, a trachea on the upper slices and
// spherical soft-tissue nodules inside the lungs.
struct PhantomOptions {
  int size = 64;      // in-plane voxels
  int slices = 16;
  double spacing_xy = 1.0;
  double spacing_z = 2.0;
  int max_nodules = 2;
  double noise_hu = 20.0;
};

struct Phantom {
  CTVolume volume;        // HU
  CTVolume segmentation;  // RegionLabels defaults (3 left, 4 right, 5 trachea)
  std::vector<NoduleAnnotation> nodules;
};

Phantom make_phantom(const std::string& series_id, const PhantomOptions& options, std::uint64_t seed);

// Writes raw/<id>.mhd, seg/<id>.mhd and annotations.csv for `count` phantoms
// named <prefix>-000, <prefix>-001, ...
void write_phantom_set(const std::filesystem::path& dir, int count, const PhantomOptions& options, std::uint64_t seed,
                       const std::string& prefix = "mini");

// Stand-in for an externally generated synthetic set: each label region is
// filled with that label's mean intensity in `reference` plus Gaussian noise
// of the label's standard deviation, then box-blurred once. Tagged
// synthetic_external and keyed to the source mask's patient.
std::vector<SlicePair> make_external_baseline(std::span<const SlicePair> masks, std::span<const SlicePair> reference,
                                              std::uint64_t seed);

}  // namespace lungsynth
