#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "lungsynth/corpus.hpp"
#include "lungsynth/error.hpp"
#include "lungsynth/mini_corpus.hpp"
#include "test_support.hpp"

using namespace lungsynth;

namespace {

std::set<std::string> patients(int n) {
  std::set<std::string> out;
  for (int i = 0; i < n; ++i) out.insert("p" + std::to_string(1000 + i));
  return out;
}

SlicePair toy_pair(const std::string& patient, int idx, bool nodule, OriginTag origin = OriginTag::kReal) {
  SlicePair p;
  p.image = Grid2D<float>(8, 8, 0.25f);
  p.image(idx % 8, 0) = 1.0f;
  p.mask = SemanticLabelMap(8, 8);
  p.mask.set(3, 3, Label::kLeftLung);
  if (nodule) p.mask.set(4, 4, Label::kNodule);
  p.patient_id = patient;
  p.slice_index = idx;
  p.origin = origin;
  return p;
}

}  // namespace

TEST(SplitByPatient, FullScaleSizesAndDisjointness) {
  const auto s = split_by_patient(patients(888), 744, 144, 42);
  EXPECT_EQ(s.train_patients.size(), 744u);
  EXPECT_EQ(s.test_patients.size(), 144u);
  for (const auto& p : s.test_patients) EXPECT_EQ(s.train_patients.count(p), 0u);
}

TEST(SplitByPatient, DeterministicAndSeedSensitive) {
  const auto a = split_by_patient(patients(10), 7, 3, 5);
  const auto b = split_by_patient(patients(10), 7, 3, 5);
  EXPECT_EQ(a.train_patients, b.train_patients);
  EXPECT_EQ(a.test_patients, b.test_patients);
  std::set<std::string> all(a.train_patients);
  all.insert(a.test_patients.begin(), a.test_patients.end());
  EXPECT_EQ(all, patients(10));
  bool differs = false;
  for (std::uint64_t seed = 6; seed < 16 && !differs; ++seed) {
    differs = split_by_patient(patients(10), 7, 3, seed).test_patients != a.test_patients;
  }
  EXPECT_TRUE(differs);
  EXPECT_THROW(split_by_patient(patients(5), 4, 2, 1), ConfigError);
}

TEST(Subsample, FloorArithmeticAndSubset) {
  EXPECT_EQ(subsample_indices(128059, 0.25, 1).size(), 32014u);
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
  EXPECT_EQ(subsample_negatives(v, 1.0, 9), v);
  const auto kept = subsample_negatives(v, 0.25, 9);
  EXPECT_EQ(kept.size(), 2u);
  EXPECT_TRUE(std::is_sorted(kept.begin(), kept.end()));
  for (int k : kept) EXPECT_TRUE(k >= 0 && k < 8);
  EXPECT_NE(kept[0], kept[1]);
  const auto strided = subsample_indices(8, 0.25, 0, SubsampleStrategy::kStrided);
  EXPECT_EQ(strided.size(), 2u);
  EXPECT_EQ(subsample_indices(0, 0.25, 1).size(), 0u);
}

TEST(Subsample, UniformityOverSeeds) {
  std::vector<int> hits(10, 0);
  for (std::uint64_t s = 0; s < 4000; ++s) {
    for (auto i : subsample_indices(10, 0.3, s)) ++hits[i];
  }
  for (int h : hits) EXPECT_NEAR(h, 1200, 150);
}

TEST(MixSynthetic, ConcatenatesAndGuardsTags) {
  std::vector<SlicePair> train{toy_pair("a", 1, true), toy_pair("a", 2, false)};
  std::vector<SlicePair> synth;
  for (int i = 0; i < 2000; ++i) synth.push_back(toy_pair("a", i, i % 2 == 0, OriginTag::kSyntheticSdm));
  const auto mixed = mix_synthetic(train, synth);
  EXPECT_EQ(mixed.size(), 2002u);
  EXPECT_EQ(std::count_if(mixed.begin(), mixed.end(), [](const SlicePair& p) { return p.origin == OriginTag::kReal; }),
            2);
  EXPECT_EQ(mix_synthetic(train, {}).size(), 2u);
  EXPECT_THROW(mix_synthetic(train, train), ContractError);
  EXPECT_THROW(require_all_real(synth, "test"), ContractError);
  EXPECT_NO_THROW(require_all_real(train, "test"));
}

TEST(SplitFiles, RoundTripAndDeterministicBytes) {
  fixtures::TempDir dir("split");
  std::vector<SlicePair> pairs{toy_pair("b", 3, true), toy_pair("a", 7, false),
                               toy_pair("a", 7, false, OriginTag::kSyntheticExternal)};
  write_split(dir / "one", pairs);
  write_split(dir / "two", pairs);
  EXPECT_EQ(fixtures::slurp(dir / "one/manifest.csv"), fixtures::slurp(dir / "two/manifest.csv"));
  const auto back = read_split(dir / "one");
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[0].patient_id, "a");  // manifest order
  for (const auto& p : back) {
    const auto it = std::find_if(pairs.begin(), pairs.end(), [&](const SlicePair& q) {
      return q.patient_id == p.patient_id && q.slice_index == p.slice_index && q.origin == p.origin;
    });
    ASSERT_NE(it, pairs.end());
    EXPECT_EQ(p.mask, it->mask);
    for (std::size_t i = 0; i < p.image.size(); ++i) EXPECT_NEAR(p.image[i], it->image[i], 0.5 / 255 + 1e-6);
  }
}

TEST(SplitFiles, HasNoduleDisagreementIsIntegrityError) {
  fixtures::TempDir dir("split");
  write_split(dir.path(), std::vector<SlicePair>{toy_pair("a", 1, true)});
  auto rows = read_manifest(dir / "manifest.csv");
  rows[0].has_nodule = false;
  write_manifest(dir / "manifest.csv", rows);
  EXPECT_THROW(read_split(dir.path()), IntegrityError);
}

TEST(Manifest, UnknownOriginTagIsFormatError) {
  EXPECT_THROW(parse_origin_tag("fake"), FormatError);
  for (auto t : {OriginTag::kReal, OriginTag::kSyntheticSdm, OriginTag::kSyntheticExternal}) {
    EXPECT_EQ(parse_origin_tag(to_string(t)), t);
  }
}

TEST(EnumerateCorpus, PhantomFixtureCounts) {
  PhantomOptions o;
  o.size = 32;
  o.slices = 8;
  std::vector<VolumeInput> vols;
  std::vector<NoduleAnnotation> anns;
  for (int i = 0; i < 3; ++i) {
    auto ph = make_phantom("ph" + std::to_string(i), o, 100 + i);
    anns.insert(anns.end(), ph.nodules.begin(), ph.nodules.end());
    vols.push_back({ph.volume, ph.segmentation});
  }
  // A volume whose segmentation has no lung contributes nothing.
  auto empty = make_phantom("empty", o, 7);
  vols.push_back({empty.volume, CTVolume(empty.segmentation.dims(), empty.segmentation.spacing(),
                                         empty.segmentation.origin(), "empty",
                                         std::vector<float>(empty.segmentation.voxels().size(), 0.0f))});
  const auto s = enumerate_corpus(vols, anns);
  // Lungs are absent on the first and last slice of every phantom.
  EXPECT_EQ(s.pairs.size(), 3u * (o.slices - 2));
  EXPECT_EQ(s.nodule_slices + s.negative_slices, s.pairs.size());
  std::size_t expected_nodule = 0;
  for (const auto& p : s.pairs) {
    EXPECT_NE(p.patient_id, "empty");
    EXPECT_TRUE(slice_contains_lung(p.mask));
    expected_nodule += p.has_nodule();
  }
  EXPECT_EQ(s.nodule_slices, expected_nodule);
  EXPECT_GT(s.nodule_slices, 0u);
}

TEST(AssembleCorpus, KeepsAllNoduleSlicesAndQuarterOfNegatives) {
  std::vector<ManifestRow> rows;
  for (int p = 0; p < 6; ++p) {
    for (int s = 0; s < 10; ++s) {
      rows.push_back({"p" + std::to_string(p), s, "i", "m", s < 2, OriginTag::kReal});
    }
  }
  CorpusOptions o;
  o.n_train = 4;
  o.n_test = 2;
  o.split_seed = 1;
  o.subsample_seed = 2;
  const auto a = assemble_corpus(rows, o);
  EXPECT_EQ(a.negatives_before, 48u);
  EXPECT_EQ(a.negatives_kept, 12u);
  EXPECT_EQ(a.train.size() + a.test.size(), 12u + 12u);
  for (const auto& r : a.test) EXPECT_EQ(a.split.test_patients.count(r.patient_id), 1u);
  for (const auto& r : a.train) EXPECT_EQ(a.split.train_patients.count(r.patient_id), 1u);
}
